//! Bundled scenario and run-configuration documents.

/// 121 m x 19 m two-lane road with sidewalks on both sides, a crosswalk at
/// x = 33..37 and eight pedestrian goals.
pub const STRAIGHT_ROAD: &str = include_str!("../fixtures/straight_road.json");

/// 100 m road with a crosswalk at x = 40..44 and one goal on each side of it.
pub const CROSSWALK: &str = include_str!("../fixtures/crosswalk.json");

/// A single 200 m x 3 m sidewalk along a road.
pub const SIDEWALK_200: &str = include_str!("../fixtures/sidewalk_200.json");
