//! Human labeling sessions backed by an append-only event log.

mod session;

pub use session::{
    is_valid_session_id, load_sessions, ClusterCard, LabelingSession, SessionEvent, SessionSpec,
    SessionState, SessionSummary, CLUSTERING_COPY, DICTIONARY_FILE, EVENT_LOG,
};
