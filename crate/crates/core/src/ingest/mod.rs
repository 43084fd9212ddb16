//! Data acquisition from an Ethereum node, the JSONL dataset store and the
//! conversion of stored observations into training windows.

pub mod hexqty;
pub mod rpc;
pub mod store;
pub mod watch;
pub mod window;

pub use hexqty::{parse_quantity, HexError};
pub use rpc::{fetch_block, Block, BlockTx, HttpTransport, NodeEndpoint, RpcError, Transport};
pub use store::{load_records, parse_line, AppendSummary, DatasetStore, StoreError};
pub use watch::{run_ingest, BlockWatcher, IngestSummary, PendingWatcher, WatchError};
pub use window::{
    join_pending_confirmed, window_from_joined, window_last_k_blocks, ContextTimeline, JoinStatus,
    JoinedRecord, Window, WindowError, WindowOptions,
};
