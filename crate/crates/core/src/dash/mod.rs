//! DASH manifests and SVC layer dependencies.

pub mod fixture;
mod mpd;

pub use mpd::{
    looks_like_mpd, parse_iso_duration, parse_mpd, MpdError, MpdManifest, Representation, SegmentTiming, UrlClass,
};
