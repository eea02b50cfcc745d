pub mod chart;
pub mod config;
pub mod control;
pub mod dynamics;
pub mod hand_eye;
pub mod kinematics;
pub mod mesh;
pub mod scene;
pub mod se3;
pub mod sim;
pub mod sparse;
pub mod surface;
