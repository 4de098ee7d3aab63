pub mod plot;
pub mod sweep;
pub mod train;
pub mod verify_theory;
