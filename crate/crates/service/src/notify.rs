//! Outbound delivery of feed notifications. The in-app feed in the store is
//! the record; dispatchers only forward copies (email, webhook, ...).

use std::sync::Mutex;

use reflect_core::model::NotificationChannel;

use crate::records::Notification;

pub trait Dispatcher: Send + Sync {
    /// Called after the notification is durably stored.
    fn dispatch(&self, n: &Notification, channel: NotificationChannel);
}

/// Drops everything; the in-app feed is enough.
#[derive(Debug, Default)]
pub struct FeedOnly;

impl Dispatcher for FeedOnly {
    fn dispatch(&self, _n: &Notification, _channel: NotificationChannel) {}
}

/// Writes one JSON line per delivery to stderr.
#[derive(Debug, Default)]
pub struct LogDispatcher;

impl Dispatcher for LogDispatcher {
    fn dispatch(&self, n: &Notification, channel: NotificationChannel) {
        let line = serde_json::json!({
            "level": "info",
            "msg": "notification",
            "channel": channel,
            "participant_id": n.participant_id,
            "kind": n.kind,
            "notification_id": n.notification_id,
        });
        eprintln!("{line}");
    }
}

/// Keeps every delivery in memory, for tests.
#[derive(Debug, Default)]
pub struct CaptureDispatcher(Mutex<Vec<(Notification, NotificationChannel)>>);

impl CaptureDispatcher {
    pub fn sent(&self) -> Vec<(Notification, NotificationChannel)> {
        self.0.lock().expect("capture poisoned").clone()
    }
}

impl Dispatcher for CaptureDispatcher {
    fn dispatch(&self, n: &Notification, channel: NotificationChannel) {
        self.0.lock().expect("capture poisoned").push((n.clone(), channel));
    }
}
