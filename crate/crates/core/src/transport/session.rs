use super::message::ScanId;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionState {
    Open,
    Complete,
    Failed,
}

/// Server-side bookkeeping for one upload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScanSession {
    pub scan_id: ScanId,
    /// Zero until the scan header has been accepted.
    pub expected_views: usize,
    pub received_views: usize,
    pub state: SessionState,
}

/// One state change, as recorded in the server's trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transition {
    pub scan_id: ScanId,
    pub from: SessionState,
    pub to: SessionState,
    pub reason: String,
}

impl ScanSession {
    pub fn new(scan_id: ScanId) -> Self {
        Self {
            scan_id,
            expected_views: 0,
            received_views: 0,
            state: SessionState::Open,
        }
    }

    /// Only `Open → Complete` and `Open → Failed` are allowed; anything else
    /// is refused and returns `None`.
    pub fn transition(&mut self, to: SessionState, reason: &str) -> Option<Transition> {
        if self.state != SessionState::Open || to == SessionState::Open {
            return None;
        }
        if to == SessionState::Complete
            && (self.expected_views == 0 || self.received_views != self.expected_views)
        {
            return None;
        }
        let t = Transition {
            scan_id: self.scan_id,
            from: self.state,
            to,
            reason: reason.to_string(),
        };
        self.state = to;
        Some(t)
    }
}
