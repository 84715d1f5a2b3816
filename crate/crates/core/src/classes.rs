//! SemanticKITTI class identifiers, the Things/Stuff split and the three
//! tracking class groups.
//!
//! Ids here are the raw label ids found in `.label` files, not the
//! 0..19 training indices.

use crate::geometry::SemanticClass;

pub const UNLABELED: SemanticClass = 0;
pub const CAR: SemanticClass = 10;
pub const BICYCLE: SemanticClass = 11;
pub const BUS: SemanticClass = 13;
pub const MOTORCYCLE: SemanticClass = 15;
pub const ON_RAILS: SemanticClass = 16;
pub const TRUCK: SemanticClass = 18;
pub const OTHER_VEHICLE: SemanticClass = 20;
pub const PERSON: SemanticClass = 30;
pub const BICYCLIST: SemanticClass = 31;
pub const MOTORCYCLIST: SemanticClass = 32;
pub const ROAD: SemanticClass = 40;
pub const PARKING: SemanticClass = 44;
pub const SIDEWALK: SemanticClass = 48;
pub const OTHER_GROUND: SemanticClass = 49;
pub const BUILDING: SemanticClass = 50;
pub const FENCE: SemanticClass = 51;
pub const VEGETATION: SemanticClass = 70;
pub const TRUNK: SemanticClass = 71;
pub const TERRAIN: SemanticClass = 72;
pub const POLE: SemanticClass = 80;
pub const TRAFFIC_SIGN: SemanticClass = 81;

/// The eight Things classes after folding, in table order.
pub const THINGS: [SemanticClass; 8] = [
    CAR,
    TRUCK,
    BICYCLE,
    MOTORCYCLE,
    OTHER_VEHICLE,
    PERSON,
    BICYCLIST,
    MOTORCYCLIST,
];

/// Fold a raw label id onto the evaluated class set: moving variants map
/// to their static class, bus and on-rails to other-vehicle, and the
/// unevaluated ids (outlier, other-structure, other-object) to unlabeled.
/// Unknown ids pass through unchanged.
pub fn canonical(raw: SemanticClass) -> SemanticClass {
    match raw {
        1 | 52 | 99 => UNLABELED,
        BUS | ON_RAILS => OTHER_VEHICLE,
        60 => ROAD, // lane-marking
        252 => CAR,
        253 => BICYCLIST,
        254 => PERSON,
        255 => MOTORCYCLIST,
        256 | 257 | 259 => OTHER_VEHICLE,
        258 => TRUCK,
        other => other,
    }
}

/// Things test on an already-canonical id.
pub fn is_thing(class: SemanticClass) -> bool {
    THINGS.contains(&class)
}

pub fn name(class: SemanticClass) -> &'static str {
    match class {
        UNLABELED => "unlabeled",
        CAR => "car",
        BICYCLE => "bicycle",
        MOTORCYCLE => "motorcycle",
        TRUCK => "truck",
        OTHER_VEHICLE => "other-vehicle",
        PERSON => "person",
        BICYCLIST => "bicyclist",
        MOTORCYCLIST => "motorcyclist",
        ROAD => "road",
        PARKING => "parking",
        SIDEWALK => "sidewalk",
        OTHER_GROUND => "other-ground",
        BUILDING => "building",
        FENCE => "fence",
        VEGETATION => "vegetation",
        TRUNK => "trunk",
        TERRAIN => "terrain",
        POLE => "pole",
        TRAFFIC_SIGN => "traffic-sign",
        _ => "unknown",
    }
}

/// Tracking class group. Each group has its own Kalman and lifecycle
/// parameters and its own association problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ClassGroup {
    Vehicles,
    Bikes,
    Pedestrian,
}

impl ClassGroup {
    pub const ALL: [ClassGroup; 3] = [ClassGroup::Vehicles, ClassGroup::Bikes, ClassGroup::Pedestrian];

    /// Group of a (raw or canonical) class id, if it is tracked at all.
    pub fn of(class: SemanticClass) -> Option<ClassGroup> {
        match canonical(class) {
            CAR | TRUCK | OTHER_VEHICLE => Some(ClassGroup::Vehicles),
            BICYCLE | MOTORCYCLE | BICYCLIST | MOTORCYCLIST => Some(ClassGroup::Bikes),
            PERSON => Some(ClassGroup::Pedestrian),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ClassGroup::Vehicles => "vehicles",
            ClassGroup::Bikes => "bikes",
            ClassGroup::Pedestrian => "pedestrian",
        }
    }
}

impl std::fmt::Display for ClassGroup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ClassGroup {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "vehicles" => Ok(ClassGroup::Vehicles),
            "bikes" => Ok(ClassGroup::Bikes),
            "pedestrian" | "pedestrians" => Ok(ClassGroup::Pedestrian),
            other => Err(format!("unknown class group '{other}'")),
        }
    }
}
