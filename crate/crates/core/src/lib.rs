pub mod dga;
pub mod fixtures;
pub mod forms;
pub mod jet;
pub mod linalg;
pub mod point;
pub mod worldvolume;
