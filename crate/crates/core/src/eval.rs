//! Rendering held-out or training views and scoring them.

use std::path::Path;

use crate::metrics::{psnr, ssim, Image, PSNR_CAP};
use crate::model::{PreparedScene, TriVolModel};
use crate::render::{Camera, RenderSettings};
use crate::scene::SceneData;
use crate::tensor::Scalar;
use crate::train::TrainScene;
use crate::{Error, Result};

pub const EVAL_HEADER: &str = "view,psnr,ssim";

#[derive(Clone, Debug, PartialEq)]
pub struct ViewScore {
    pub view: usize,
    /// Capped at [`PSNR_CAP`] for identical images.
    pub psnr: Scalar,
    pub ssim: Scalar,
}

impl ViewScore {
    pub fn csv_line(&self) -> String {
        format!("{},{},{}", self.view, self.psnr, self.ssim)
    }

    pub fn parse_csv_line(line: &str) -> Result<Self> {
        let bad = || Error::Parse {
            path: "<eval csv>".into(),
            line: 0,
            message: format!("bad eval row {line:?}"),
        };
        let mut it = line.trim().split(',');
        let (Some(v), Some(p), Some(s), None) = (it.next(), it.next(), it.next(), it.next()) else {
            return Err(bad());
        };
        Ok(Self {
            view: v.parse().map_err(|_| bad())?,
            psnr: p.parse().map_err(|_| bad())?,
            ssim: s.parse().map_err(|_| bad())?,
        })
    }
}

/// Indices `views`, or every index below `count`; out-of-range
/// indices are an error.
pub fn select_views(views: Option<&[usize]>, count: usize) -> Result<Vec<usize>> {
    let chosen = views.map(<[usize]>::to_vec).unwrap_or_else(|| (0..count).collect());
    if let Some(&v) = chosen.iter().find(|&&v| v >= count) {
        return Err(Error::Config(format!("view {v} does not exist (scene has {count} views)")));
    }
    Ok(chosen)
}

/// Loads `dir` as a training scene supervised by `views`.
pub fn load_train_scene(dir: &Path, model: &crate::model::ModelConfig, views: Option<&[usize]>) -> Result<TrainScene> {
    let data = SceneData::load(dir)?;
    let prepared = model.prepare(&data.points)?;
    let pairs = select_views(views, data.cameras.len())?
        .into_iter()
        .map(|v| (data.cameras[v].clone(), data.images[v].clone()))
        .collect();
    TrainScene::new(prepared, pairs)
}

/// Renders each camera, scoring it against `targets` when present.
pub fn render_and_score(
    model: &TriVolModel,
    scene: &PreparedScene,
    cameras: &[(usize, &Camera, Option<&Image>)],
    settings: &RenderSettings,
    seed: u64,
) -> Result<Vec<(Image, Option<ViewScore>)>> {
    let volumes = model.decode_volumes(scene)?;
    cameras
        .iter()
        .map(|&(view, cam, target)| {
            let img = crate::render::render_view(&model.store, &model.head, &volumes, cam, &scene.bounds, settings, seed)?;
            let score = target
                .map(|t| {
                    Ok::<_, Error>(ViewScore {
                        view,
                        psnr: psnr(&img, t)?.min(PSNR_CAP),
                        ssim: ssim(&img, t)?,
                    })
                })
                .transpose()?;
            Ok((img, score))
        })
        .collect()
}
