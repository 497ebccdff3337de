pub mod balance;
pub mod events;
pub mod frames;
pub mod window;
pub mod synth;
