//! Rays, sampling, feature queries, the radiance MLP and compositing.

pub mod camera;
pub mod composite;
pub mod field;
pub mod pipeline;
pub mod sampling;

pub use camera::{generate_ray, Camera, Ray};
pub use composite::{composite, composite_var, Composited, WHITE};
pub use field::{encode_direction, query_feature, query_features, RadianceHead, RadianceHeadConfig, RadianceSample};
pub use pipeline::{ray_rng, render_pixel, render_rays, render_view, RenderSettings};
pub use sampling::{importance_sample, stratified_sample, RaySampleBatch};
