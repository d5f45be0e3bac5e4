use image::{Rgb, RgbImage};
use nalgebra::Matrix3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;
use texmap::atlas::{self, TexturedModel};
use texmap::blend::{blend_face, patch_resolution, build_masks, distance_maps, texel_barycentric, FacePatch};
use texmap::camera::{PinholeCamera, Projector, ViewImage};
use texmap::eval;
use texmap::mesh::{self, AdjacencyGraph, LoadOptions, Mesh, Vec3};
use texmap::mrf::{extract_top_n, lbp_solve, CandidateSet, CostVolume, LbpParams};
use texmap::par;
use texmap::quality;
use texmap::pipeline::{texture_views, PipelineConfig};
use texmap::sample::bilinear_rgb;
use texmap::synth::{self, SceneSpec, Shape};
use texmap::visibility::{compute_visibility, face_visibility, rasterize_depth};

fn soup(coords: &[f64]) -> Option<Mesh> {
    let vertices: Vec<Vec3> = coords.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect();
    let faces = (0..vertices.len() / 3).map(|i| [3 * i, 3 * i + 1, 3 * i + 2]).collect();
    Mesh::new(vertices, faces).ok()
}

fn front_camera() -> PinholeCamera {
    PinholeCamera::new(40.0, 40.0, 32.0, 32.0, Matrix3::identity(), Vec3::zeros(), 64, 64).unwrap()
}

/// Triangles scattered in front of [`front_camera`].
fn scene_coords() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0, 1.0f64..4.0), 9..45)
        .prop_map(|v| v.into_iter().flat_map(|(x, y, z)| [x, y, z]).collect::<Vec<_>>())
        .prop_map(|mut v| {
            v.truncate(v.len() / 9 * 9);
            v
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn depth_buffer_owner_is_visible(coords in scene_coords()) {
        let Some(mesh) = soup(&coords) else { return Ok(()) };
        let cam = front_camera();
        let depth = rasterize_depth(&mesh, &cam);
        for f in 0..mesh.face_count() {
            let vis = face_visibility(&mesh, f, &cam, 0, &depth, 0.0);
            for y in 0..cam.height {
                for x in 0..cam.width {
                    if depth.face(x, y) == Some(f) {
                        prop_assert!(vis.visible_pixels.contains(&[x, y]), "face {f} pixel ({x}, {y})");
                    }
                }
            }
        }
    }

    #[test]
    fn visibility_grows_with_bias(coords in scene_coords()) {
        let Some(mesh) = soup(&coords) else { return Ok(()) };
        let cam = front_camera();
        let depth = rasterize_depth(&mesh, &cam);
        for f in 0..mesh.face_count() {
            let sets: Vec<_> = [0.0, 1e-3, 0.1, 1.0]
                .iter()
                .map(|&b| face_visibility(&mesh, f, &cam, 0, &depth, b).visible_pixels)
                .collect();
            for w in sets.windows(2) {
                prop_assert!(w[0].iter().all(|p| w[1].contains(p)));
            }
        }
    }

    #[test]
    fn depth_buffer_ignores_worker_count(coords in scene_coords()) {
        let Some(mesh) = soup(&coords) else { return Ok(()) };
        let cam = front_camera();
        let a = par::with_workers(1, || rasterize_depth(&mesh, &cam));
        let b = par::with_workers(3, || rasterize_depth(&mesh, &cam));
        for y in 0..cam.height {
            for x in 0..cam.width {
                prop_assert_eq!(a.face(x, y), b.face(x, y));
                prop_assert_eq!(a.depth(x, y).to_bits(), b.depth(x, y).to_bits());
            }
        }
    }

    #[test]
    fn export_preserves_vertices_bit_exactly(
        coords in prop::collection::vec(prop_oneof![-1e6f64..1e6, -1e-6f64..1e-6], 9..36),
    ) {
        let coords = &coords[..coords.len() / 9 * 9];
        let Some(mesh) = soup(coords) else { return Ok(()) };
        let atlas = atlas::pack(&vec![None; mesh.face_count()]).unwrap();
        let model = TexturedModel::new(mesh.clone(), atlas);
        let dir = TempDir::new().unwrap();
        atlas::export(&model, dir.path()).unwrap();
        let back = mesh::load_mesh(&dir.path().join("model.obj"), &LoadOptions::default()).unwrap();
        prop_assert_eq!(back.faces, mesh.faces);
        for (a, b) in back.vertices.iter().zip(&mesh.vertices) {
            for k in 0..3 {
                prop_assert_eq!(a[k].to_bits(), b[k].to_bits());
            }
        }
    }
}

/// Random MRF: `n` faces, random edges, each face a non-empty subset of
/// five views with costs in `[0, 1]`.
fn random_mrf(seed: u64, n: usize) -> (AdjacencyGraph, Vec<Vec<(u32, f64)>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if rng.random::<f64>() < 0.35 {
                edges.push((a, b));
            }
        }
    }
    let costs = (0..n)
        .map(|_| {
            let mut c = Vec::new();
            for v in 0..5u32 {
                if rng.random::<f64>() < 0.6 {
                    c.push((v, rng.random::<f64>()));
                }
            }
            if c.is_empty() {
                c.push((rng.random_range(0..5), rng.random()));
            }
            c
        })
        .collect();
    (AdjacencyGraph::from_edges(n, edges), costs)
}

fn scaled(costs: &[Vec<(u32, f64)>], s: f64) -> CostVolume {
    CostVolume::new(costs.iter().map(|f| f.iter().map(|&(v, c)| (v, c * s)).collect()).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn beliefs_scale_with_costs(seed in any::<u64>(), n in 2usize..10, e in -3i32..4, s in 0.05f64..20.0) {
        let (g, costs) = random_mrf(seed, n);
        // No early stop: both runs must take the same number of passes.
        let params = |lambda: f64| LbpParams { lambda, tolerance: 0.0, max_iters: 30, ..Default::default() };
        let (base, _) = lbp_solve(&g, &scaled(&costs, 1.0), &params(0.5)).unwrap();
        let top = extract_top_n(&base, 3, 0.4);

        // Powers of two scale every operation exactly.
        let p = 2f64.powi(e);
        let (b, _) = lbp_solve(&g, &scaled(&costs, p), &params(0.5 * p)).unwrap();
        for (x, y) in base.faces.iter().flatten().zip(b.faces.iter().flatten()) {
            prop_assert_eq!(x.0, y.0);
            prop_assert_eq!((x.1 * p).to_bits(), y.1.to_bits());
        }
        let ids = |c: &CandidateSet| c.faces.iter().map(|f| f.iter().map(|l| l.0).collect::<Vec<_>>()).collect::<Vec<_>>();
        prop_assert_eq!(ids(&top), ids(&extract_top_n(&b, 3, 0.4)));

        let (b, _) = lbp_solve(&g, &scaled(&costs, s), &params(0.5 * s)).unwrap();
        for (x, y) in base.faces.iter().flatten().zip(b.faces.iter().flatten()) {
            prop_assert!((x.1 * s - y.1).abs() <= 1e-9 * (1.0 + y.1.abs()));
        }
    }

    #[test]
    fn beliefs_ignore_worker_count(seed in any::<u64>(), n in 2usize..12) {
        let (g, costs) = random_mrf(seed, n);
        let cv = scaled(&costs, 1.0);
        let params = LbpParams::default();
        let (a, sa) = par::with_workers(1, || lbp_solve(&g, &cv, &params).unwrap());
        let (b, sb) = par::with_workers(3, || lbp_solve(&g, &cv, &params).unwrap());
        prop_assert_eq!(sa.iterations, sb.iterations);
        for (x, y) in a.faces.iter().flatten().zip(b.faces.iter().flatten()) {
            prop_assert_eq!(x.0, y.0);
            prop_assert_eq!(x.1.to_bits(), y.1.to_bits());
        }
    }

    #[test]
    fn zero_smoothness_keeps_data_argmin(seed in any::<u64>(), n in 2usize..12) {
        let (g, costs) = random_mrf(seed, n);
        let (b, _) = lbp_solve(&g, &scaled(&costs, 1.0), &LbpParams { lambda: 0.0, ..Default::default() }).unwrap();
        let top = extract_top_n(&b, 1, 0.4);
        for (f, c) in costs.iter().enumerate() {
            let best = c.iter().min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0))).unwrap().0;
            prop_assert_eq!(top.faces[f][0].0, best);
        }
    }
}

/// Five unit squares side by side in the `z = 1` plane, two triangles each.
fn strip() -> Mesh {
    let mut vertices = Vec::new();
    for k in 0..=5 {
        vertices.push(Vec3::new(k as f64, 0.0, 1.0));
        vertices.push(Vec3::new(k as f64, 5.0, 1.0));
    }
    let faces = (0..5)
        .flat_map(|k| {
            let (a, b, c, d) = (2 * k, 2 * k + 1, 2 * k + 2, 2 * k + 3);
            [[a, b, c], [c, b, d]]
        })
        .collect();
    Mesh::new(vertices, faces).unwrap()
}

fn strip_camera() -> PinholeCamera {
    PinholeCamera::new(60.0, 60.0, 20.0, 20.0, Matrix3::identity(), Vec3::zeros(), 340, 340).unwrap()
}

fn per_square(views: [Vec<u32>; 5]) -> CandidateSet {
    CandidateSet {
        faces: views
            .iter()
            .flat_map(|v| {
                let c: Vec<(u32, f64)> = v.iter().map(|&id| (id, 0.0)).collect();
                [c.clone(), c]
            })
            .collect(),
    }
}

fn view_subset() -> impl Strategy<Value = Vec<u32>> {
    (1u8..8).prop_map(|bits| (0..3).filter(|k| bits & (1 << k) != 0).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn blended_texels_stay_in_the_candidate_hull(
        seed in any::<u64>(),
        subsets in [view_subset(), view_subset(), view_subset(), view_subset(), view_subset()],
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let views: Vec<ViewImage> = (0..3)
            .map(|id| ViewImage {
                id,
                camera: strip_camera(),
                pixels: RgbImage::from_fn(340, 340, |_, _| Rgb([rng.random(), rng.random(), rng.random()])),
            })
            .collect();
        let mesh = strip();
        let cands = per_square(subsets);
        let vis = compute_visibility(&mesh, &views, 1e-3, |_, _| {});
        let dists = distance_maps(&build_masks(&cands, &vis, &views));
        for f in 0..mesh.face_count() {
            let p = blend_face(&mesh, f, &cands.faces[f], &views, &dists, |id| id as usize, 24);
            prop_assert!(p.max_weight_error < 1e-6);
            for j in 0..p.resolution {
                for i in 0..p.resolution {
                    if !FacePatch::is_covered(p.resolution, i, j) {
                        continue;
                    }
                    let (s, t) = texel_barycentric(p.resolution, i, j);
                    let x = mesh.point_at(f, s, t);
                    let pr = strip_camera().project(&x).unwrap();
                    let samples: Vec<[f64; 3]> =
                        cands.faces[f].iter().map(|c| bilinear_rgb(&views[c.0 as usize].pixels, pr.u, pr.v)).collect();
                    let texel = p.texel(i, j);
                    for k in 0..3 {
                        let lo = samples.iter().map(|c| c[k]).fold(f64::INFINITY, f64::min);
                        let hi = samples.iter().map(|c| c[k]).fold(f64::NEG_INFINITY, f64::max);
                        prop_assert!((texel[k] as f64) >= lo - 1e-3 && (texel[k] as f64) <= hi + 1e-3);
                    }
                }
            }
        }
    }
}

#[test]
fn blended_colour_is_continuous_across_shared_edges() {
    // Two views of smooth content that disagree by a gain and an offset;
    // squares 1 to 3 keep both, so their weights vary across the strip.
    let views = [
        ViewImage {
            id: 0,
            camera: strip_camera(),
            pixels: RgbImage::from_fn(340, 340, |x, y| Rgb([(x / 2) as u8, (y / 2) as u8, 80])),
        },
        ViewImage {
            id: 1,
            camera: strip_camera(),
            pixels: RgbImage::from_fn(340, 340, |x, y| Rgb([(x / 2 + 40) as u8, (y * 2 / 3) as u8, 130])),
        },
    ];
    let mesh = strip();
    let cands = per_square([vec![0], vec![0, 1], vec![0, 1], vec![0, 1], vec![1]]);
    let vis = compute_visibility(&mesh, &views, 1e-3, |_, _| {});
    let dists = distance_maps(&build_masks(&cands, &vis, &views));
    let patches: Vec<_> = (0..mesh.face_count())
        .map(|f| {
            let area = quality::projected_area(vis.get(0, f).unwrap());
            Some(blend_face(&mesh, f, &cands.faces[f], &views, &dists, |id| id as usize, patch_resolution(area)))
        })
        .collect();
    let model = TexturedModel::new(mesh.clone(), atlas::pack(&patches).unwrap());
    let graph = AdjacencyGraph::build(&mesh);
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    for &(f, g) in graph.edges() {
        let shared = |a: usize, b: usize| cands.faces[a].iter().all(|c| cands.faces[b].contains(c)) && cands.faces[a].len() == 2;
        if !(shared(f, g) && shared(g, f)) {
            continue;
        }
        let common: Vec<usize> = mesh.faces[f].iter().copied().filter(|v| mesh.faces[g].contains(v)).collect();
        let bary = |face: usize, t: f64| {
            let mut b = [0.0; 3];
            b[mesh.faces[face].iter().position(|&v| v == common[0]).unwrap()] = 1.0 - t;
            b[mesh.faces[face].iter().position(|&v| v == common[1]).unwrap()] = t;
            b
        };
        for k in 1..20 {
            let t = k as f64 / 20.0;
            let (a, b) = (eval::texture_color(&model, f, bary(f, t)), eval::texture_color(&model, g, bary(g, t)));
            for c in 0..3 {
                worst = worst.max((a[c] - b[c]).abs());
            }
        }
        checked += 1;
    }
    assert!(checked >= 5, "only {checked} edges");
    assert!(worst <= 2.0, "largest step {worst} gray levels");
}

#[test]
fn virtual_render_ignores_worker_count() {
    let scene = synth::generate_scene(&SceneSpec {
        shape: Shape::Cube { subdiv: 2 },
        width: 128,
        height: 128,
        supersample: 1,
        ..SceneSpec::default()
    })
    .unwrap();
    let out = texture_views(&scene.mesh, &scene.views, &PipelineConfig::default()).unwrap();
    for v in &scene.views {
        let a = par::with_workers(1, || eval::render_virtual(&out.model, &v.camera));
        let b = par::with_workers(3, || eval::render_virtual(&out.model, &v.camera));
        assert_eq!(a.image, b.image);
        assert_eq!(a.coverage, b.coverage);
    }
}
