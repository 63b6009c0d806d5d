//! The adversary: clustering-based inference of the places a user
//! frequents, plus the auxiliary attacks built on top of it.

pub mod area;
pub mod colocation;
pub mod dbscan;
pub mod infer;
pub mod poi;
pub mod subclusters;

pub use area::{AreaEstimate, AreaSummary, DEFAULT_CELL_M};
pub use colocation::{detect_colocations, CoLocationEvent, CoLocations};
pub use dbscan::{dbscan, DbscanParams};
pub use infer::{
    infer_areas, rounding_adversary_areas, temporal_filter, AttackMethod, AttackResult, Cluster, InferOptions,
    Schedule,
};
pub use poi::{query_pois, OfflinePois, OverpassConfig, OverpassProvider, PoiError, PoiProvider, PoiRecord};
pub use subclusters::split_subclusters;
