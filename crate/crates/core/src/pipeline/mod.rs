//! End-to-end refinement: postprocess the initial mask, plan prompts, query
//! the predictor on prompt-centered patches and merge.
//!
//! The final mask is the union of the pasted predictor masks and the refined
//! initial mask, so it always contains both.

pub mod manifest;

use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::postprocess::{postprocess_mask, PostprocessConfig, PostprocessReport};
use crate::predictor::{PredictRequest, PredictResponse, PredictorBackend, SlideImage, DEFAULT_IN_FLIGHT};
use crate::prompting::{plan_prompts, PromptConfig, PromptPlan};
use crate::raster::{BinaryMask, LabelMask, Point, ProbabilityMap};
use crate::tiling::{centered_window, PatchWindow};

pub use manifest::{
    InputDigests, ManifestHeader, ManifestSummary, PromptEntry, PromptStatus, RunManifest, RunStatus, Timing,
    MANIFEST_FORMAT,
};

/// How prompt points become predictor requests.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Grouping {
    /// One request per point, the patch centered on it.
    #[default]
    PerPoint,
    /// Points of one component that fall in the same centered patch are sent
    /// together in one request.
    Joint,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub postprocess: PostprocessConfig,
    /// Also fixes the predictor patch side.
    pub prompt: PromptConfig,
    /// Maximum predictor requests in flight.
    pub concurrency: usize,
    pub grouping: Grouping,
    /// Skip prompts the predictor rejected or timed out on instead of failing.
    pub best_effort: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            postprocess: PostprocessConfig::default(),
            prompt: PromptConfig::default(),
            concurrency: DEFAULT_IN_FLIGHT,
            grouping: Grouping::PerPoint,
            best_effort: false,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.postprocess.validate()?;
        self.prompt.validate()?;
        if self.concurrency == 0 {
            return Err(Error::validation("concurrency must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct PipelineOutput {
    /// Union of `predicted` and `refined`.
    pub final_mask: BinaryMask,
    /// Initial melanoma plane after in-situ filtering.
    pub refined: BinaryMask,
    /// Union of all pasted predictor masks.
    pub predicted: BinaryMask,
    pub report: PostprocessReport,
    pub plan: PromptPlan,
    pub manifest: RunManifest,
}

/// A failed run and whatever manifest had been written by then.
#[derive(Debug)]
pub struct RunFailure {
    pub error: Error,
    pub manifest: Option<Box<RunManifest>>,
}

impl fmt::Display for RunFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.error.fmt(f)
    }
}

impl std::error::Error for RunFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl From<Error> for RunFailure {
    fn from(error: Error) -> Self {
        RunFailure { error, manifest: None }
    }
}

impl From<RunFailure> for Error {
    fn from(f: RunFailure) -> Self {
        f.error
    }
}

/// ORs `patch` into `acc` at the window origin.
pub fn paste(acc: &mut BinaryMask, window: &PatchWindow, patch: &BinaryMask) -> Result<()> {
    patch.check_same_grid(window.side, window.side, "patch mask")?;
    if window.x0 as u64 + window.side as u64 > acc.width() as u64
        || window.y0 as u64 + window.side as u64 > acc.height() as u64
    {
        return Err(Error::validation(format!(
            "window at ({}, {}) of side {} leaves the {}x{} slide",
            window.x0,
            window.y0,
            window.side,
            acc.width(),
            acc.height()
        )));
    }
    for p in patch.ones() {
        acc.set(window.x0 + p.x, window.y0 + p.y, true);
    }
    Ok(())
}

/// Final mask: predicted masks united with the refined initial mask.
pub fn merge_union(predicted: &BinaryMask, refined: &BinaryMask) -> Result<BinaryMask> {
    let mut out = predicted.clone();
    out.union_with(refined)?;
    Ok(out)
}

/// One planned predictor request before it is sent.
#[derive(Clone, Debug, PartialEq)]
pub struct PlannedRequest {
    pub component: u32,
    /// Slide coordinates.
    pub points: Vec<Point>,
    pub window: PatchWindow,
}

/// Turns a plan into requests on a `width` x `height` grid.
pub fn plan_requests(
    plan: &PromptPlan,
    side: u32,
    width: u32,
    height: u32,
    grouping: Grouping,
) -> Result<Vec<PlannedRequest>> {
    let mut out = Vec::new();
    for comp in &plan.components {
        let mut done = vec![false; comp.points.len()];
        for i in 0..comp.points.len() {
            if done[i] {
                continue;
            }
            let window = centered_window(comp.points[i].point, side, width, height)?;
            let mut points = vec![comp.points[i].point];
            done[i] = true;
            if grouping == Grouping::Joint {
                for (j, p) in comp.points.iter().enumerate().skip(i + 1) {
                    if !done[j] && window.contains(p.point) {
                        done[j] = true;
                        points.push(p.point);
                    }
                }
            }
            out.push(PlannedRequest {
                component: comp.id,
                points,
                window,
            });
        }
    }
    Ok(out)
}

/// Runs the pipeline against a backend.
pub struct Pipeline<'a> {
    backend: &'a dyn PredictorBackend,
    label: String,
    cfg: PipelineConfig,
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

impl<'a> Pipeline<'a> {
    pub fn new(backend: &'a dyn PredictorBackend, cfg: PipelineConfig) -> Self {
        Pipeline {
            backend,
            label: "custom".into(),
            cfg,
        }
    }

    /// Backend description stored in the manifest.
    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    /// Slides smaller than one patch are padded with background for the
    /// run and the result cropped back.
    pub fn run(
        &self,
        mask: &LabelMask,
        probmap: &ProbabilityMap,
        image: Option<&SlideImage>,
    ) -> std::result::Result<PipelineOutput, RunFailure> {
        let started = Instant::now();
        let cfg = &self.cfg;
        cfg.validate()?;
        let (w, h) = mask.dims();
        if probmap.dims() != (w, h) {
            return Err(Error::validation(format!(
                "probability map is {}x{}, mask is {w}x{h}",
                probmap.width(),
                probmap.height()
            ))
            .into());
        }
        if let Some(img) = image {
            if (img.width, img.height) != (w, h) {
                return Err(
                    Error::validation(format!("slide image is {}x{}, mask is {w}x{h}", img.width, img.height)).into(),
                );
            }
        }
        let side = cfg.prompt.patch_side;
        let (ww, wh) = (w.max(side), h.max(side));
        let header = ManifestHeader {
            format: MANIFEST_FORMAT,
            tool: concat!("slideprompt ", env!("CARGO_PKG_VERSION")).to_string(),
            width: w,
            height: h,
            work_width: ww,
            work_height: wh,
            inputs: InputDigests {
                mask: manifest::label_digest(mask),
                probmap: manifest::probmap_digest(probmap),
                image: image.map(|i| manifest::bytes_digest(&i.data)),
            },
            config: *cfg,
            backend: self.label.clone(),
            nondeterministic: self.backend.nondeterministic(),
        };
        let mut timing = Timing::default();

        let t = Instant::now();
        let (mask_w, prob_w) = if (ww, wh) == (w, h) {
            (None, None)
        } else {
            (Some(mask.padded(ww, wh)), Some(probmap.padded(ww, wh)))
        };
        let pp = postprocess_mask(
            mask_w.as_ref().unwrap_or(mask),
            prob_w.as_ref().unwrap_or(probmap),
            &cfg.postprocess,
        )?;
        timing.postprocess_ms = ms(t);

        let t = Instant::now();
        let plan = plan_prompts(&pp.mask, &cfg.prompt)?;
        let planned = plan_requests(&plan, side, ww, wh, cfg.grouping)?;
        let requests: Vec<PredictRequest> = planned
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let local = p
                    .points
                    .iter()
                    .map(|q| Point::new(q.x - p.window.x0, q.y - p.window.y0))
                    .collect();
                let mut req = PredictRequest::for_window(i as u64, &p.window, local);
                req.patch = image.map(|img| img.patch(&p.window));
                req
            })
            .collect();
        timing.plan_ms = ms(t);

        let mut prompts: Vec<PromptEntry> = planned
            .iter()
            .zip(&requests)
            .map(|(p, r)| PromptEntry {
                id: r.id,
                component: p.component,
                points: p.points.clone(),
                window: p.window,
                request: manifest::request_digest(r),
                response: None,
                score: None,
                mask_pixels: None,
                status: PromptStatus::Pending,
                error: None,
            })
            .collect();

        let fail = |error: Error, prompts: Vec<PromptEntry>, mut timing: Timing, refined: u64| {
            timing.total_ms = ms(started);
            let answered = prompts.iter().filter(|p| p.status == PromptStatus::Ok).count();
            let skipped = prompts.iter().filter(|p| p.status == PromptStatus::Skipped).count();
            let summary = ManifestSummary {
                status: RunStatus::Failed,
                error: Some(error.to_string()),
                requests: prompts.len(),
                answered,
                skipped,
                refined_pixels: refined,
                predicted_pixels: 0,
                final_pixels: 0,
                final_digest: None,
                timing,
            };
            RunFailure {
                error,
                manifest: Some(Box::new(RunManifest {
                    header: header.clone(),
                    prompts,
                    summary: Some(summary),
                })),
            }
        };

        let t = Instant::now();
        let results = if requests.is_empty() {
            Vec::new()
        } else {
            if let Some(bad) = requests.iter().find_map(|r| r.validate().err()) {
                return Err(fail(bad, prompts, timing, pp.mask.count()));
            }
            match self.backend.predict_batch(&requests, cfg.concurrency) {
                Ok(r) => r,
                Err(e) => return Err(fail(e, prompts, timing, pp.mask.count())),
            }
        };
        timing.predict_ms = ms(t);

        let t = Instant::now();
        let mut predicted = BinaryMask::empty(ww, wh);
        let mut first_error = None;
        let responses: Vec<Option<PredictResponse>> = results
            .into_iter()
            .zip(&requests)
            .zip(prompts.iter_mut())
            .map(|((res, req), entry)| {
                let res = res.and_then(|r| r.check_against(req).map(|_| r));
                match res {
                    Ok(r) => {
                        entry.response = Some(manifest::response_digest(&r));
                        entry.score = Some(r.score);
                        entry.mask_pixels = Some(r.mask.count());
                        entry.status = PromptStatus::Ok;
                        Some(r)
                    }
                    Err(e) => {
                        let skippable = matches!(e, Error::Predictor { .. } | Error::Timeout(_));
                        entry.error = Some(e.to_string());
                        if cfg.best_effort && skippable {
                            entry.status = PromptStatus::Skipped;
                        } else {
                            entry.status = PromptStatus::Failed;
                            first_error.get_or_insert(e);
                        }
                        None
                    }
                }
            })
            .collect();
        if let Some(e) = first_error {
            return Err(fail(e, prompts, timing, pp.mask.count()));
        }
        for (resp, p) in responses.iter().zip(&planned) {
            if let Some(r) = resp {
                paste(&mut predicted, &p.window, &r.mask)?;
            }
        }
        let mut final_mask = merge_union(&predicted, &pp.mask)?;
        let mut refined = pp.mask;
        if (ww, wh) != (w, h) {
            final_mask = final_mask.crop(0, 0, w, h)?;
            refined = refined.crop(0, 0, w, h)?;
            predicted = predicted.crop(0, 0, w, h)?;
        }
        timing.merge_ms = ms(t);
        timing.total_ms = ms(started);

        let summary = ManifestSummary {
            status: RunStatus::Complete,
            error: None,
            requests: requests.len(),
            answered: prompts.iter().filter(|p| p.status == PromptStatus::Ok).count(),
            skipped: prompts.iter().filter(|p| p.status == PromptStatus::Skipped).count(),
            refined_pixels: refined.count(),
            predicted_pixels: predicted.count(),
            final_pixels: final_mask.count(),
            final_digest: Some(manifest::mask_digest(&final_mask)),
            timing,
        };
        Ok(PipelineOutput {
            final_mask,
            refined,
            predicted,
            report: pp.report,
            plan,
            manifest: RunManifest {
                header,
                prompts,
                summary: Some(summary),
            },
        })
    }
}

/// Runs with the default label and no slide image.
pub fn run_pipeline(
    mask: &LabelMask,
    probmap: &ProbabilityMap,
    backend: &dyn PredictorBackend,
    cfg: &PipelineConfig,
) -> std::result::Result<PipelineOutput, RunFailure> {
    Pipeline::new(backend, *cfg).run(mask, probmap, None)
}

/// Reruns a recorded manifest on the same inputs and checks that every
/// request, response and the final mask hash to the recorded digests.
pub fn replay(
    recorded: &RunManifest,
    mask: &LabelMask,
    probmap: &ProbabilityMap,
    image: Option<&SlideImage>,
    backend: &dyn PredictorBackend,
) -> Result<PipelineOutput> {
    let h = &recorded.header;
    if manifest::label_digest(mask) != h.inputs.mask {
        return Err(Error::validation("mask differs from the one recorded in the manifest"));
    }
    if manifest::probmap_digest(probmap) != h.inputs.probmap {
        return Err(Error::validation(
            "probability map differs from the one recorded in the manifest",
        ));
    }
    if image.map(|i| manifest::bytes_digest(&i.data)) != h.inputs.image {
        return Err(Error::validation(
            "slide image differs from the one recorded in the manifest",
        ));
    }
    let out = Pipeline::new(backend, h.config)
        .with_label(h.backend.clone())
        .run(mask, probmap, image)?;
    if out.manifest.prompts.len() != recorded.prompts.len() {
        return Err(Error::validation(format!(
            "replay issued {} requests, manifest has {}",
            out.manifest.prompts.len(),
            recorded.prompts.len()
        )));
    }
    for (a, b) in out.manifest.prompts.iter().zip(&recorded.prompts) {
        if a.request != b.request || a.response != b.response {
            return Err(Error::validation(format!("replay diverged at request {}", a.id)));
        }
    }
    let want = recorded.summary.as_ref().and_then(|s| s.final_digest.as_ref());
    let got = out.manifest.summary.as_ref().and_then(|s| s.final_digest.as_ref());
    if want != got {
        return Err(Error::validation("replayed final mask differs from the recorded one"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::MockOracle;
    use crate::raster::Class;

    fn slide() -> (LabelMask, ProbabilityMap) {
        let mut m = LabelMask::filled(96, 80, Class::Other);
        for y in 10..20 {
            for x in 10..30 {
                m.set(x, y, Class::Melanoma);
            }
        }
        for y in 46..50 {
            for x in 5..90 {
                m.set(x, y, Class::Melanoma);
            }
        }
        (m, ProbabilityMap::filled(96, 80, 0.9).unwrap())
    }

    fn cfg(side: u32) -> PipelineConfig {
        let mut c = PipelineConfig::default();
        c.prompt.patch_side = side;
        c.prompt.grid_gap = 16;
        c
    }

    #[test]
    fn paste_ors_at_origin() {
        let mut acc = BinaryMask::empty(6, 6);
        acc.set(0, 0, true);
        let patch = BinaryMask::from_fn(3, 3, |x, y| x == y);
        paste(&mut acc, &PatchWindow::new(2, 1, 3), &patch).unwrap();
        assert_eq!(acc.count(), 4);
        assert!(acc.get(2, 1) && acc.get(4, 3) && acc.get(0, 0));
        assert!(paste(&mut acc, &PatchWindow::new(4, 4, 3), &patch).is_err());
        assert!(paste(&mut acc, &PatchWindow::new(0, 0, 2), &patch).is_err());
    }

    #[test]
    fn empty_refined_mask_makes_no_requests() {
        let m = LabelMask::filled(40, 40, Class::Epidermis);
        let p = ProbabilityMap::filled(40, 40, 0.1).unwrap();
        let backend = MockOracle::new(&m);
        let out = run_pipeline(&m, &p, &backend, &cfg(32)).unwrap();
        assert!(out.final_mask.is_empty());
        assert!(out.manifest.prompts.is_empty());
    }

    #[test]
    fn oracle_on_ground_truth_reproduces_it() {
        let (m, p) = slide();
        let backend = MockOracle::new(&m);
        let out = run_pipeline(&m, &p, &backend, &cfg(32)).unwrap();
        assert_eq!(out.final_mask, m.class_plane(Class::Melanoma));
        assert_eq!(out.manifest.prompts.len(), out.plan.point_count());
    }

    #[test]
    fn joint_grouping_sends_fewer_requests_same_result() {
        let (m, p) = slide();
        let backend = MockOracle::new(&m);
        let per_point = run_pipeline(&m, &p, &backend, &cfg(32)).unwrap();
        let mut c = cfg(32);
        c.grouping = Grouping::Joint;
        let joint = run_pipeline(&m, &p, &backend, &c).unwrap();
        assert!(joint.manifest.prompts.len() < per_point.manifest.prompts.len());
        assert_eq!(joint.final_mask, per_point.final_mask);
    }

    #[test]
    fn small_slide_is_padded() {
        let (m, p) = slide();
        let backend = MockOracle::new(&m);
        let out = run_pipeline(&m, &p, &backend, &cfg(128)).unwrap();
        assert_eq!(out.final_mask.dims(), (96, 80));
        assert_eq!(out.final_mask, m.class_plane(Class::Melanoma));
        assert_eq!(
            (out.manifest.header.work_width, out.manifest.header.work_height),
            (128, 128)
        );
    }

    #[test]
    fn grid_mismatch_is_validation() {
        let (m, _) = slide();
        let p = ProbabilityMap::filled(10, 10, 0.5).unwrap();
        let err = run_pipeline(&m, &p, &MockOracle::new(&m), &cfg(32)).unwrap_err();
        assert!(matches!(err.error, Error::Validation(_)));
        assert!(err.manifest.is_none());
    }

    struct Refuses;

    impl PredictorBackend for Refuses {
        fn predict(&self, req: &PredictRequest) -> Result<PredictResponse> {
            if req.id == 1 {
                Err(Error::Predictor {
                    id: 1,
                    message: "no".into(),
                })
            } else {
                Ok(PredictResponse {
                    id: req.id,
                    mask: BinaryMask::empty(req.width, req.height),
                    score: 0.0,
                })
            }
        }
    }

    #[test]
    fn predictor_error_fails_with_partial_manifest() {
        let (m, p) = slide();
        let err = run_pipeline(&m, &p, &Refuses, &cfg(32)).unwrap_err();
        assert!(matches!(err.error, Error::Predictor { id: 1, .. }));
        let man = err.manifest.unwrap();
        assert_eq!(man.prompts[1].status, PromptStatus::Failed);
        assert_eq!(man.summary.unwrap().status, RunStatus::Failed);

        let mut c = cfg(32);
        c.best_effort = true;
        let out = run_pipeline(&m, &p, &Refuses, &c).unwrap();
        assert_eq!(out.manifest.prompts[1].status, PromptStatus::Skipped);
        assert_eq!(out.final_mask, out.refined);
    }

    #[test]
    fn manifest_round_trip_and_replay() {
        let (m, p) = slide();
        let backend = MockOracle::new(&m);
        let out = Pipeline::new(&backend, cfg(32))
            .with_label("mock")
            .run(&m, &p, None)
            .unwrap();
        let mut buf = Vec::new();
        out.manifest.write_jsonl(&mut buf).unwrap();
        let back = RunManifest::read_jsonl(&buf[..]).unwrap();
        assert_eq!(back, out.manifest);
        let again = replay(&back, &m, &p, None, &backend).unwrap();
        assert_eq!(again.final_mask, out.final_mask);

        let mut other = m.clone();
        other.set(0, 0, Class::Epidermis);
        assert!(replay(&back, &other, &p, None, &backend).is_err());
    }
}
