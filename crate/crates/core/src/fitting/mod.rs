//! Optimizers that turn predicted human points into body parameters and
//! human affordances into robot configurations.

pub mod ad;
pub mod body;
pub mod descent;
pub mod robot;

pub use body::{body_loss_and_gradient, body_objective, fit_body, BodyFit, FitBodyConfig};
pub use descent::{gauss_newton_direction, minimize, minimize_along, solve_spd, DescentConfig, DescentResult};
pub use robot::{
    cross_embodiment_fit, cross_objective, robot_fk, robot_scores, CorrespondenceMap, CrossFitConfig, RobotFit,
    RobotModel, RobotPose, RobotScoreConfig, RobotTargets,
};
