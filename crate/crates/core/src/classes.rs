//! Class vocabularies of the scene and bridge-component classifiers.

pub use crate::optim::IGNORE;

pub const SCENE_CLASSES: [&str; 10] = [
    "Building",
    "Greenery",
    "Person",
    "Pavement",
    "Sign&Poles",
    "Vehicles",
    "Bridges",
    "Water",
    "Sky",
    "Others",
];

pub const COMPONENT_CLASSES: [&str; 5] = [
    "Non-bridge",
    "Columns",
    "Beams&Slabs",
    "Other structural",
    "Other nonstructural",
];

pub const N_SCENE: usize = SCENE_CLASSES.len();
pub const N_COMPONENT: usize = COMPONENT_CLASSES.len();

pub mod scene {
    pub const BUILDING: u8 = 0;
    pub const GREENERY: u8 = 1;
    pub const PERSON: u8 = 2;
    pub const PAVEMENT: u8 = 3;
    pub const SIGN_POLES: u8 = 4;
    pub const VEHICLES: u8 = 5;
    pub const BRIDGES: u8 = 6;
    pub const WATER: u8 = 7;
    pub const SKY: u8 = 8;
    pub const OTHERS: u8 = 9;
}

pub mod component {
    pub const NON_BRIDGE: u8 = 0;
    pub const COLUMNS: u8 = 1;
    pub const BEAMS_SLABS: u8 = 2;
    pub const OTHER_STRUCTURAL: u8 = 3;
    pub const OTHER_NONSTRUCTURAL: u8 = 4;
}

/// Scene classes other than Bridges, in index order.
pub fn non_bridge_scene_classes() -> impl Iterator<Item = u8> {
    (0..N_SCENE as u8).filter(|&c| c != scene::BRIDGES)
}
