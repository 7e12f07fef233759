pub mod geometry;
pub mod pnp;
pub mod kinematics;
pub mod io;
pub mod trajectory;
pub mod ndp;
pub mod learn;
pub mod retarget;
pub mod synth;
pub mod pipeline;
