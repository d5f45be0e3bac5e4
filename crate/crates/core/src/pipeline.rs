//! End-to-end texturing and evaluation runs.

use std::fmt;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::atlas::{self, TexturedModel};
use crate::blend;
use crate::camera::{self, ViewImage};
use crate::eval::{self, EvalReport};
use crate::mesh::{self, AdjacencyGraph, LoadOptions, Mesh};
use crate::mrf::{self, BeliefVolume, CandidateSet, LbpParams, LbpStats};
use crate::par;
use crate::quality::{self, ConsistencyParams, QualityTable};
use crate::visibility;

/// Optional diagnostic outputs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DumpOptions {
    /// Directory for 16-bit depth PNGs.
    pub depth: Option<PathBuf>,
    /// CSV of per-face, per-view quality.
    pub quality: Option<PathBuf>,
    /// CSV of ranked candidates.
    pub labels: Option<PathBuf>,
    /// Directory for 16-bit distance-map PNGs.
    pub dist: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub top_n: usize,
    pub lbp_iters: usize,
    pub lambda: f64,
    pub lbp_damping: f64,
    pub ratio: f64,
    pub meanshift_threshold: f64,
    pub meanshift_iters: usize,
    pub depth_bias: f64,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
    pub drop_degenerate: bool,
    pub weld: Option<f64>,
    /// Images are resolved against this directory instead of the
    /// manifest's.
    pub image_root: Option<PathBuf>,
    pub cache: Option<PathBuf>,
    pub dump: DumpOptions,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            top_n: 3,
            lbp_iters: 50,
            lambda: 0.5,
            lbp_damping: 0.5,
            ratio: 0.4,
            meanshift_threshold: 0.006,
            meanshift_iters: 10,
            depth_bias: 1e-3,
            workers: 0,
            drop_degenerate: false,
            weld: None,
            image_root: None,
            cache: None,
            dump: DumpOptions::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::input(Stage::Config, m));
        if self.top_n == 0 {
            return bad("top_n must be at least 1");
        }
        if self.lbp_iters == 0 {
            return bad("lbp_iters must be at least 1");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be a non-negative number");
        }
        if !(0.0..1.0).contains(&self.lbp_damping) {
            return bad("lbp_damping must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.ratio) {
            return bad("ratio must lie in [0, 1]");
        }
        if !(self.meanshift_threshold > 0.0 && self.meanshift_threshold < 1.0) {
            return bad("meanshift_threshold must lie in (0, 1)");
        }
        if self.meanshift_iters == 0 {
            return bad("meanshift_iters must be at least 1");
        }
        if !(self.depth_bias >= 0.0 && self.depth_bias.is_finite()) {
            return bad("depth_bias must be a non-negative number");
        }
        if self.weld.is_some_and(|w| !(w > 0.0)) {
            return bad("weld distance must be positive");
        }
        Ok(())
    }

    pub fn consistency(&self) -> ConsistencyParams {
        ConsistencyParams {
            threshold: self.meanshift_threshold,
            max_iters: self.meanshift_iters,
            ..ConsistencyParams::default()
        }
    }

    pub fn lbp(&self) -> LbpParams {
        LbpParams {
            lambda: self.lambda,
            max_iters: self.lbp_iters,
            damping: self.lbp_damping,
            ..LbpParams::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Config,
    Mesh,
    Camera,
    Visibility,
    Quality,
    Mrf,
    Blend,
    Atlas,
    Export,
    Eval,
    Cache,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok();
        f.write_str(s.as_ref().and_then(|v| v.as_str()).unwrap_or("?"))
    }
}

/// Whether a failure stems from bad input or from a broken invariant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Input,
    Internal,
}

#[derive(Debug, Error)]
#[error("stage \"{stage}\": {message}")]
pub struct PipelineError {
    pub stage: Stage,
    pub kind: ErrorKind,
    pub message: String,
}

impl PipelineError {
    pub fn input(stage: Stage, e: impl fmt::Display) -> Self {
        Self {
            stage,
            kind: ErrorKind::Input,
            message: e.to_string(),
        }
    }

    pub fn internal(stage: Stage, e: impl fmt::Display) -> Self {
        Self {
            stage,
            kind: ErrorKind::Internal,
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: Stage,
    pub seconds: f64,
}

/// Summary of a texturing run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: PipelineConfig,
    pub faces: usize,
    pub views: usize,
    pub adjacency_edges: usize,
    pub timings: Vec<StageTiming>,
    pub lbp: Option<LbpStats>,
    /// `candidate_histogram[k]` faces kept exactly `k` views.
    pub candidate_histogram: Vec<usize>,
    pub peak_candidates: usize,
    pub untextured_faces: usize,
    pub equal_weight_texels: usize,
    pub filled_texels: usize,
    pub max_weight_error: f64,
    pub atlas_pages: usize,
    pub atlas_side: u32,
    pub cache_hits: Vec<Stage>,
}

impl RunReport {
    /// Copy with timing fields zeroed, for run-to-run comparison.
    pub fn without_timings(&self) -> Self {
        let mut r = self.clone();
        for t in &mut r.timings {
            t.seconds = 0.0;
        }
        r
    }
}

/// Everything the selection stages produce, for inspection.
#[derive(Debug, Clone)]
pub struct Selection {
    pub quality: QualityTable,
    pub beliefs: BeliefVolume,
    pub candidates: CandidateSet,
}

#[derive(Debug, Clone)]
pub struct TextureOutput {
    pub model: TexturedModel,
    pub selection: Selection,
    pub report: RunReport,
}

struct Timer {
    timings: Vec<StageTiming>,
}

impl Timer {
    fn run<T>(&mut self, stage: Stage, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        let seconds = start.elapsed().as_secs_f64();
        log::info!("{stage}: {seconds:.3} s");
        self.timings.push(StageTiming { stage, seconds });
        out
    }
}

/// Content hash of the inputs that determine the selection stages.
fn input_digest(mesh: &Mesh, views: &[ViewImage], config: &PipelineConfig) -> Sha256 {
    let mut h = Sha256::new();
    for v in &mesh.vertices {
        for c in v.iter() {
            h.update(c.to_le_bytes());
        }
    }
    for f in &mesh.faces {
        for &i in f {
            h.update((i as u64).to_le_bytes());
        }
    }
    for v in views {
        let c = &v.camera;
        h.update(v.id.to_le_bytes());
        for x in [c.fx, c.fy, c.cx, c.cy].iter().chain(c.rotation.iter()).chain(c.translation.iter()) {
            h.update(x.to_le_bytes());
        }
        h.update(c.width.to_le_bytes());
        h.update(c.height.to_le_bytes());
        h.update(v.pixels.as_raw());
    }
    h.update(config.depth_bias.to_le_bytes());
    h.update(serde_json::to_vec(&config.consistency()).unwrap_or_default());
    h
}

fn cache_key(base: &Sha256, extra: &[u8]) -> String {
    let mut h = base.clone();
    h.update(extra);
    hex::encode(h.finalize())
}

fn cache_load<T: for<'de> Deserialize<'de>>(dir: &Path, name: &str) -> Option<T> {
    let text = std::fs::read(dir.join(name)).ok()?;
    serde_json::from_slice(&text).ok()
}

fn cache_store<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir).map_err(|e| PipelineError::input(Stage::Cache, e))?;
    let f = File::create(dir.join(name)).map_err(|e| PipelineError::input(Stage::Cache, e))?;
    serde_json::to_writer(BufWriter::new(f), value).map_err(|e| PipelineError::input(Stage::Cache, e))
}

fn write_csv_file(path: &Path, stage: Stage, write: impl FnOnce(BufWriter<File>) -> std::io::Result<()>) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| PipelineError::input(stage, e))?;
    }
    let f = File::create(path).map_err(|e| PipelineError::input(stage, e))?;
    write(BufWriter::new(f)).map_err(|e| PipelineError::input(stage, e))
}

/// Visibility, quality and view selection.
fn select(
    mesh: &Mesh,
    views: &[ViewImage],
    config: &PipelineConfig,
    timer: &mut Timer,
    cache_hits: &mut Vec<Stage>,
) -> Result<(visibility::VisibilitySet, Selection, AdjacencyGraph, Option<LbpStats>), PipelineError> {
    if let Some(dir) = &config.dump.depth {
        std::fs::create_dir_all(dir).map_err(|e| PipelineError::input(Stage::Visibility, e))?;
    }
    let dump_err = std::sync::Mutex::new(None);
    let vis = timer.run(Stage::Visibility, || {
        visibility::compute_visibility(mesh, views, config.depth_bias, |v, d| {
            if let Some(dir) = &config.dump.depth {
                if let Err(e) = d.save_png(&dir.join(format!("depth_{:03}.png", v.id))) {
                    *dump_err.lock().expect("dump lock") = Some(e.to_string());
                }
            }
        })
    });
    if let Some(e) = dump_err.into_inner().expect("dump lock") {
        return Err(PipelineError::input(Stage::Visibility, e));
    }

    let digest = input_digest(mesh, views, config);
    let quality_name = format!("quality-{}.json", cache_key(&digest, b"quality"));
    let cached: Option<QualityTable> = config.cache.as_deref().and_then(|d| cache_load(d, &quality_name));
    let quality = match cached {
        Some(q) if q.face_count() == mesh.face_count() => {
            cache_hits.push(Stage::Quality);
            q
        }
        _ => {
            let q = timer.run(Stage::Quality, || {
                quality::compute_quality(mesh.face_count(), views, &vis, &config.consistency())
            });
            if let Some(dir) = &config.cache {
                cache_store(dir, &quality_name, &q)?;
            }
            q
        }
    };
    if let Some(p) = &config.dump.quality {
        write_csv_file(p, Stage::Quality, |w| quality.write_csv(w))?;
    }

    let graph = AdjacencyGraph::build(mesh);
    let mrf_extra = serde_json::to_vec(&(config.lbp(), config.top_n, config.ratio)).unwrap_or_default();
    let mrf_name = format!("mrf-{}.json", cache_key(&digest, &mrf_extra));
    let cached: Option<(BeliefVolume, CandidateSet)> = config.cache.as_deref().and_then(|d| cache_load(d, &mrf_name));
    let (beliefs, candidates, stats) = match cached {
        Some((b, c)) if c.faces.len() == mesh.face_count() => {
            cache_hits.push(Stage::Mrf);
            (b, c, None)
        }
        _ => {
            let (b, c, s) = timer.run(Stage::Mrf, || -> Result<_, PipelineError> {
                let costs = mrf::build_data_costs(&quality);
                let (beliefs, stats) =
                    mrf::lbp_solve(&graph, &costs, &config.lbp()).map_err(|e| PipelineError::internal(Stage::Mrf, e))?;
                let candidates = mrf::extract_top_n(&beliefs, config.top_n, config.ratio);
                Ok((beliefs, candidates, stats))
            })?;
            if let Some(dir) = &config.cache {
                cache_store(dir, &mrf_name, &(&b, &c))?;
            }
            (b, c, Some(s))
        }
    };
    if let Some(p) = &config.dump.labels {
        write_csv_file(p, Stage::Mrf, |w| candidates.write_csv(w))?;
    }
    let untextured = candidates.untextured_count();
    if untextured > 0 {
        log::warn!("{untextured} faces are seen by no view and stay untextured");
    }
    Ok((
        vis,
        Selection {
            quality,
            beliefs,
            candidates,
        },
        graph,
        stats,
    ))
}

/// Textures an in-memory mesh from in-memory views.
pub fn texture_views(mesh: &Mesh, views: &[ViewImage], config: &PipelineConfig) -> Result<TextureOutput, PipelineError> {
    config.validate()?;
    if views.is_empty() {
        return Err(PipelineError::input(Stage::Camera, camera::CameraError::Empty));
    }
    par::with_workers(config.workers, || texture_inner(mesh, views, config, Vec::new()))
}

fn texture_inner(
    mesh: &Mesh,
    views: &[ViewImage],
    config: &PipelineConfig,
    timings: Vec<StageTiming>,
) -> Result<TextureOutput, PipelineError> {
    let mut timer = Timer { timings };
    let mut cache_hits = Vec::new();
    let (vis, selection, graph, lbp) = select(mesh, views, config, &mut timer, &mut cache_hits)?;
    let candidates = &selection.candidates;

    let patches = timer.run(Stage::Blend, || -> Result<_, PipelineError> {
        let masks = blend::build_masks(candidates, &vis, views);
        let dists = blend::distance_maps(&masks);
        if let Some(dir) = &config.dump.dist {
            std::fs::create_dir_all(dir).map_err(|e| PipelineError::input(Stage::Blend, e))?;
            for (d, v) in dists.iter().zip(views) {
                d.save_png(&dir.join(format!("dist_{:03}.png", v.id)))
                    .map_err(|e| PipelineError::input(Stage::Blend, e))?;
            }
        }
        let quality = &selection.quality;
        Ok(blend::blend_all(mesh, candidates, views, &dists, |f| {
            blend::patch_resolution(quality.max_area(f))
        }))
    })?;
    drop(vis);

    let atlas = timer.run(Stage::Atlas, || atlas::pack(&patches).map_err(|e| PipelineError::internal(Stage::Atlas, e)))?;
    let present = patches.iter().flatten();
    let (mut equal, mut filled, mut max_err) = (0, 0, 0.0f64);
    for p in present {
        equal += p.equal_weight_texels;
        filled += p.filled_texels;
        max_err = max_err.max(p.max_weight_error);
    }
    let histogram = candidates.count_histogram();
    let report = RunReport {
        config: config.clone(),
        faces: mesh.face_count(),
        views: views.len(),
        adjacency_edges: graph.edge_count(),
        timings: Vec::new(),
        lbp,
        peak_candidates: histogram.len().saturating_sub(1),
        candidate_histogram: histogram,
        untextured_faces: candidates.untextured_count(),
        equal_weight_texels: equal,
        filled_texels: filled,
        max_weight_error: max_err,
        atlas_pages: atlas.pages.len(),
        atlas_side: atlas.pages[0].width(),
        cache_hits,
    };
    let model = TexturedModel::new(mesh.clone(), atlas);
    Ok(TextureOutput {
        model,
        selection,
        report: RunReport {
            timings: timer.timings,
            ..report
        },
    })
}

fn image_root(manifest: &Path, config: &PipelineConfig) -> PathBuf {
    config
        .image_root
        .clone()
        .unwrap_or_else(|| manifest.parent().map(Path::to_path_buf).unwrap_or_default())
}

/// Loads the mesh and views named on the command line.
pub fn load_inputs(
    mesh_path: &Path,
    manifest_path: &Path,
    config: &PipelineConfig,
    timer_out: &mut Vec<StageTiming>,
) -> Result<(Mesh, Vec<ViewImage>), PipelineError> {
    let mut timer = Timer { timings: Vec::new() };
    let opts = LoadOptions {
        drop_degenerate: config.drop_degenerate,
        weld: config.weld,
    };
    let mesh = timer.run(Stage::Mesh, || mesh::load_mesh(mesh_path, &opts).map_err(|e| PipelineError::input(Stage::Mesh, e)))?;
    let views = timer.run(Stage::Camera, || {
        camera::load_views(manifest_path, &image_root(manifest_path, config)).map_err(|e| PipelineError::input(Stage::Camera, e))
    })?;
    timer_out.extend(timer.timings);
    Ok((mesh, views))
}

/// Full texturing run from files: writes `model.obj`, `model.mtl`, the
/// atlas pages and `report.json` into `out_dir`.
pub fn run_texture(
    mesh_path: &Path,
    manifest_path: &Path,
    out_dir: &Path,
    config: &PipelineConfig,
) -> Result<TextureOutput, PipelineError> {
    config.validate()?;
    par::with_workers(config.workers, || {
        let mut timings = Vec::new();
        let (mesh, views) = load_inputs(mesh_path, manifest_path, config, &mut timings)?;
        let mut out = texture_inner(&mesh, &views, config, timings)?;
        let start = Instant::now();
        atlas::export(&out.model, out_dir).map_err(|e| PipelineError::input(Stage::Export, e))?;
        out.report.timings.push(StageTiming {
            stage: Stage::Export,
            seconds: start.elapsed().as_secs_f64(),
        });
        let report_path = out_dir.join("report.json");
        let text = serde_json::to_string_pretty(&out.report).map_err(|e| PipelineError::internal(Stage::Export, e))?;
        std::fs::write(&report_path, text).map_err(|e| PipelineError::input(Stage::Export, e))?;
        Ok(out)
    })
}

/// Re-renders every view from an exported model and scores it.
pub fn run_evaluate(model_path: &Path, manifest_path: &Path, config: &PipelineConfig) -> Result<EvalReport, PipelineError> {
    config.validate()?;
    par::with_workers(config.workers, || {
        let model = atlas::load_textured_model(model_path).map_err(|e| PipelineError::input(Stage::Mesh, e))?;
        let views = camera::load_views(manifest_path, &image_root(manifest_path, config))
            .map_err(|e| PipelineError::input(Stage::Camera, e))?;
        eval::evaluate_dataset(&model, &views).map_err(|e| PipelineError::input(Stage::Eval, e))
    })
}

/// Per-face, per-view table of quality, data cost, final cost and
/// candidate rank (empty when the view was not kept).
pub fn inspect_csv(selection: &Selection) -> String {
    use std::fmt::Write as _;
    let costs = mrf::build_data_costs(&selection.quality);
    let mut out = String::from("face,view,S,omega,Q,data_cost,final_cost,rank\n");
    for (f, entries) in selection.quality.faces.iter().enumerate() {
        let mut entries = entries.clone();
        entries.sort_by_key(|e| e.view);
        for e in entries {
            let data = costs.cost(f, e.view).unwrap_or(f64::NAN);
            let fin = selection.beliefs.faces[f]
                .iter()
                .find(|l| l.0 == e.view)
                .map_or(f64::NAN, |l| l.1);
            let rank = selection.candidates.faces[f]
                .iter()
                .position(|c| c.0 == e.view)
                .map(|r| (r + 1).to_string())
                .unwrap_or_default();
            let _ = writeln!(out, "{f},{},{},{},{},{data},{fin},{rank}", e.view, e.s, e.omega, e.q);
        }
    }
    out
}

/// Runs the selection stages only and returns the inspection table.
pub fn run_inspect(mesh_path: &Path, manifest_path: &Path, config: &PipelineConfig) -> Result<String, PipelineError> {
    config.validate()?;
    par::with_workers(config.workers, || {
        let mut timings = Vec::new();
        let (mesh, views) = load_inputs(mesh_path, manifest_path, config, &mut timings)?;
        let mut timer = Timer { timings };
        let (_, selection, _, _) = select(&mesh, &views, config, &mut timer, &mut Vec::new())?;
        Ok(inspect_csv(&selection))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{self, CameraLayout, SceneSpec, Shape};

    fn small_scene() -> synth::Scene {
        synth::generate_scene(&SceneSpec {
            shape: Shape::Cube { subdiv: 2 },
            width: 128,
            height: 128,
            supersample: 1,
            ..SceneSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn defaults_validate_and_bad_values_do_not() {
        assert!(PipelineConfig::default().validate().is_ok());
        for c in [
            PipelineConfig { top_n: 0, ..Default::default() },
            PipelineConfig { ratio: 1.5, ..Default::default() },
            PipelineConfig { lambda: -1.0, ..Default::default() },
            PipelineConfig { meanshift_threshold: 0.0, ..Default::default() },
        ] {
            assert_eq!(c.validate().unwrap_err().stage, Stage::Config);
        }
    }

    #[test]
    fn cube_is_fully_textured() {
        let scene = small_scene();
        let out = texture_views(&scene.mesh, &scene.views, &PipelineConfig::default()).unwrap();
        assert_eq!(out.report.untextured_faces, 0);
        assert!(out.report.max_weight_error < 1e-6);
        assert_eq!(out.model.textured.iter().filter(|&&t| t).count(), scene.mesh.face_count());
        assert_eq!(out.model.pages.len(), 1);
    }

    #[test]
    fn top_one_keeps_a_single_view() {
        let scene = small_scene();
        let config = PipelineConfig { top_n: 1, ..Default::default() };
        let out = texture_views(&scene.mesh, &scene.views, &config).unwrap();
        assert!(out.selection.candidates.faces.iter().all(|c| c.len() == 1));
    }

    #[test]
    fn hidden_faces_stay_untextured() {
        let mut spec = SceneSpec {
            shape: Shape::Cube { subdiv: 1 },
            width: 64,
            height: 64,
            supersample: 1,
            ..SceneSpec::default()
        };
        spec.cameras = CameraLayout::Custom(vec![synth::CameraPose {
            eye: [0.0, 0.0, 6.0],
            target: [0.0; 3],
            up: [0.0, 1.0, 0.0],
        }]);
        let scene = synth::generate_scene(&spec).unwrap();
        let out = texture_views(&scene.mesh, &scene.views, &PipelineConfig::default()).unwrap();
        assert_eq!(out.report.untextured_faces, 10);
        assert_eq!(out.model.textured.iter().filter(|&&t| t).count(), 2);
    }

    #[test]
    fn cache_reuses_selection() {
        let scene = small_scene();
        let dir = tempfile::tempdir().unwrap();
        let config = PipelineConfig {
            cache: Some(dir.path().to_path_buf()),
            ..Default::default()
        };
        let a = texture_views(&scene.mesh, &scene.views, &config).unwrap();
        assert!(a.report.cache_hits.is_empty());
        let b = texture_views(&scene.mesh, &scene.views, &config).unwrap();
        assert_eq!(b.report.cache_hits, vec![Stage::Quality, Stage::Mrf]);
        assert_eq!(a.model.pages, b.model.pages);
        let c = texture_views(&scene.mesh, &scene.views, &PipelineConfig { lambda: 0.25, ..config }).unwrap();
        assert_eq!(c.report.cache_hits, vec![Stage::Quality]);
    }

    #[test]
    fn inspect_lists_every_visible_pair() {
        let scene = small_scene();
        let out = texture_views(&scene.mesh, &scene.views, &PipelineConfig::default()).unwrap();
        let csv = inspect_csv(&out.selection);
        let rows = csv.lines().count() - 1;
        assert_eq!(rows, out.selection.quality.faces.iter().map(Vec::len).sum::<usize>());
        let ranked = csv.lines().skip(1).filter(|l| !l.ends_with(',')).count();
        assert_eq!(ranked, out.selection.candidates.faces.iter().map(Vec::len).sum::<usize>());
    }
}
