pub mod density;
pub mod error;
pub mod gp;
pub mod hmc;
pub mod linalg;
pub mod merge;
pub mod metrics;
pub mod optim;
pub mod recombine;
pub mod rng;
pub mod scalar;
pub mod targets;

pub use density::LogDensity;
pub use error::{Error, Result};
pub use scalar::Real;

macro_rules! precision_aliases {
    ($name:ident, $t:ty, $doc:literal) => {
        #[doc = $doc]
        pub mod $name {
            pub type ChainRecord = crate::hmc::ChainRecord<$t>;
            pub type HmcConfig = crate::hmc::HmcConfig<$t>;
            pub type GpSurrogate = crate::gp::GpSurrogate<$t>;
            pub type MergedGp = crate::merge::MergedGp<$t>;
            pub type Model = crate::targets::Model<$t>;
            pub type Dataset = crate::targets::Dataset<$t>;
            pub type WeightedSample = crate::recombine::WeightedSample<$t>;
        }
    };
}

precision_aliases!(double, f64, "Double-precision instantiations.");
precision_aliases!(single, f32, "Single-precision instantiations.");
