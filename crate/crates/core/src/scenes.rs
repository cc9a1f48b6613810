//! The fixed ten-scene label set and score vectors over it.

use std::fmt;

/// Number of scene classes.
pub const NUM_SCENES: usize = 10;

/// The ten acoustic scene classes, in canonical (score column) order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum SceneLabel {
    Airport = 0,
    Bus,
    Metro,
    MetroStation,
    Park,
    PublicSquare,
    ShoppingMall,
    StreetPedestrian,
    StreetTraffic,
    Tram,
}

/// All labels in canonical order.
pub const ALL_SCENES: [SceneLabel; NUM_SCENES] = [
    SceneLabel::Airport,
    SceneLabel::Bus,
    SceneLabel::Metro,
    SceneLabel::MetroStation,
    SceneLabel::Park,
    SceneLabel::PublicSquare,
    SceneLabel::ShoppingMall,
    SceneLabel::StreetPedestrian,
    SceneLabel::StreetTraffic,
    SceneLabel::Tram,
];

impl SceneLabel {
    /// Canonical class index in `0..NUM_SCENES`.
    pub fn index(self) -> usize {
        self as usize
    }

    /// Label from a class index.
    pub fn from_index(index: usize) -> Option<SceneLabel> {
        ALL_SCENES.get(index).copied()
    }

    /// The machine-readable name used in manifests and score CSV headers.
    pub fn name(self) -> &'static str {
        match self {
            SceneLabel::Airport => "airport",
            SceneLabel::Bus => "bus",
            SceneLabel::Metro => "metro",
            SceneLabel::MetroStation => "metro_station",
            SceneLabel::Park => "park",
            SceneLabel::PublicSquare => "public_square",
            SceneLabel::ShoppingMall => "shopping_mall",
            SceneLabel::StreetPedestrian => "street_pedestrian",
            SceneLabel::StreetTraffic => "street_traffic",
            SceneLabel::Tram => "tram",
        }
    }

    /// Human-readable name used in report tables.
    pub fn display_name(self) -> &'static str {
        match self {
            SceneLabel::Airport => "Airport",
            SceneLabel::Bus => "Bus",
            SceneLabel::Metro => "Metro",
            SceneLabel::MetroStation => "Metro Station",
            SceneLabel::Park => "Park",
            SceneLabel::PublicSquare => "Public Square",
            SceneLabel::ShoppingMall => "Shopping Mall",
            SceneLabel::StreetPedestrian => "Street Pedestrian",
            SceneLabel::StreetTraffic => "Street Traffic",
            SceneLabel::Tram => "Tram",
        }
    }

    /// Parse a machine-readable scene name.
    pub fn parse(name: &str) -> Option<SceneLabel> {
        ALL_SCENES.iter().copied().find(|s| s.name() == name)
    }
}

impl fmt::Display for SceneLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-segment vector of one score per scene class, in canonical order.
pub type ScoreVector = [f64; NUM_SCENES];

/// Index of the winning class; ties break to the lowest class index.
pub fn argmax(scores: &ScoreVector) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}
