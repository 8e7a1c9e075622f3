use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive};

/// Floating-point scalar for the feature, metric, and clustering stages.
///
/// `FromPrimitive` supplies exact conversions from the integer counts and
/// `f64` constants that appear in the update rules; `Send + Sync` lets row
/// computations fan out across threads.
pub trait Scalar: Float + FromPrimitive + Debug + Display + Send + Sync + 'static {}

impl Scalar for f32 {}
impl Scalar for f64 {}
