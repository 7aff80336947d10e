//! Append-only event log shared by the router and the harness.
//!
//! Records carry a virtual timestamp and export as CSV
//! (`time,component,event,detail`). Admin notifications — the
//! out-of-band channel — are ordinary records under the reserved
//! component name [`ADMIN`], so "was the admin notified" is a filter,
//! not a separate store.

/// Reserved component name for out-of-band admin notifications.
pub const ADMIN: &str = "admin";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventRecord {
    pub time_us: u64,
    pub component: String,
    pub event: String,
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct EventLog {
    records: Vec<EventRecord>,
}

fn csv_field(text: &str) -> String {
    if text.contains([',', '"', '\n']) {
        format!("\"{}\"", text.replace('"', "\"\""))
    } else {
        text.to_string()
    }
}

impl EventLog {
    pub fn new() -> EventLog {
        EventLog::default()
    }

    pub fn record(
        &mut self,
        time_us: u64,
        component: impl Into<String>,
        event: impl Into<String>,
        detail: impl Into<String>,
    ) {
        self.records.push(EventRecord {
            time_us,
            component: component.into(),
            event: event.into(),
            detail: detail.into(),
        });
    }

    pub fn notify_admin(&mut self, time_us: u64, event: impl Into<String>, detail: impl Into<String>) {
        self.record(time_us, ADMIN, event, detail);
    }

    pub fn records(&self) -> &[EventRecord] {
        &self.records
    }

    pub fn admin_notifications(&self) -> impl Iterator<Item = &EventRecord> {
        self.records.iter().filter(|r| r.component == ADMIN)
    }

    pub fn count(&self, event: &str) -> usize {
        self.records.iter().filter(|r| r.event == event).count()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("time,component,event,detail\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.time_us,
                csv_field(&r.component),
                csv_field(&r.event),
                csv_field(&r.detail)
            ));
        }
        out
    }
}
