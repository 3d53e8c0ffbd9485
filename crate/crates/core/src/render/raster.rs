use super::project::{project_gaussian, Splat2D, MAX_ALPHA, SUPPORT_SIGMAS};
use super::RenderError;
use crate::exec;
use crate::flow::{FlowMap, FlowUnits, FlowWeighting};
use crate::scene::{Camera, GaussianScene};

/// Accumulated weight below which a pixel counts as uncovered.
pub const COVERAGE_EPS: f64 = 1e-6;
const SUPPORT_M2: f64 = SUPPORT_SIGMAS * SUPPORT_SIGMAS;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderConfig {
    pub tile_size: usize,
    /// Compositing stops once transmittance drops below this.
    pub min_transmittance: f64,
    /// Contributions with weight `T·α` at or below this are not recorded.
    pub min_contribution: f64,
    pub record_contributions: bool,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            tile_size: 16,
            min_transmittance: 1e-4,
            min_contribution: 1e-4,
            record_contributions: true,
        }
    }
}

impl RenderConfig {
    /// No early termination and every nonzero contribution recorded.
    pub fn exact() -> Self {
        RenderConfig {
            min_transmittance: 0.0,
            min_contribution: 0.0,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contribution {
    /// Source Gaussian index.
    pub index: usize,
    /// Blend weight `T_i α_i`.
    pub weight: f64,
    /// Camera-frame depth `Z_i`.
    pub depth: f64,
    /// Position in [`RenderBuffers::splats`].
    pub slot: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderBuffers {
    pub width: usize,
    pub height: usize,
    pub color: Vec<[f64; 3]>,
    /// Expected depth `Σ Z_i w_i / Σ w_i`, or 0 where uncovered.
    pub depth: Vec<f64>,
    pub accum_alpha: Vec<f64>,
    /// Dynamic Gaussian flow `Σ w_i (μ_i,t − μ_i,0)`; zero unless rendered with displacements.
    pub gs_flow: Vec<[f64; 2]>,
    /// Front-to-back contributors per pixel, row-major. Empty when the
    /// render was configured not to record them.
    pub contributions: Vec<Vec<Contribution>>,
    /// Projected splats in compositing order.
    pub splats: Vec<Splat2D>,
}

impl RenderBuffers {
    pub fn pixel(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    pub fn is_covered(&self, p: usize) -> bool {
        self.accum_alpha[p] > COVERAGE_EPS
    }
}

#[derive(Debug, Clone, Default)]
struct PixelOut {
    color: [f64; 3],
    depth: f64,
    accum: f64,
    flow: [f64; 2],
    contributions: Vec<Contribution>,
}

/// Canonical compositing order: front to back by depth, ties by source index.
pub fn sort_splats(splats: &mut [Splat2D]) {
    splats.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.index.cmp(&b.index)));
}

/// Project every Gaussian and return the visible splats in compositing order.
pub fn project_scene(scene: &GaussianScene, cam: &Camera) -> Vec<Splat2D> {
    let projected = exec::map_range(scene.len(), |i| {
        project_gaussian(&scene.gaussians[i], i, cam)
    });
    let mut splats: Vec<Splat2D> = projected.into_iter().flatten().collect();
    sort_splats(&mut splats);
    splats
}

#[allow(clippy::too_many_arguments)]
fn shade_pixel(
    x: f64,
    y: f64,
    splats: &[Splat2D],
    candidates: impl Iterator<Item = usize>,
    flow: Option<&[[f64; 2]]>,
    background: [f64; 3],
    cfg: &RenderConfig,
) -> PixelOut {
    let mut out = PixelOut::default();
    let mut t = 1.0;
    let mut depth_sum = 0.0;
    for slot in candidates {
        let s = &splats[slot];
        let m2 = s.mahalanobis2(x, y);
        if m2 > SUPPORT_M2 {
            continue;
        }
        let alpha = (s.opacity * (-0.5 * m2).exp()).min(MAX_ALPHA);
        if !(alpha > 0.0) {
            continue;
        }
        let w = t * alpha;
        for c in 0..3 {
            out.color[c] += w * s.color[c];
        }
        depth_sum += w * s.depth;
        out.accum += w;
        if let Some(f) = flow {
            out.flow[0] += w * f[slot][0];
            out.flow[1] += w * f[slot][1];
        }
        if cfg.record_contributions && w > cfg.min_contribution {
            out.contributions.push(Contribution {
                index: s.index,
                weight: w,
                depth: s.depth,
                slot,
            });
        }
        t *= 1.0 - alpha;
        if t < cfg.min_transmittance {
            break;
        }
    }
    for c in 0..3 {
        out.color[c] += t * background[c];
    }
    out.depth = if out.accum > COVERAGE_EPS {
        depth_sum / out.accum
    } else {
        0.0
    };
    out
}

/// Inclusive pixel range covered by a splat's support box plus a one-pixel margin.
fn pixel_span(mean: f64, extent: f64, size: usize) -> Option<(usize, usize)> {
    let lo = (mean - extent - 1.0).ceil().max(0.0);
    let hi = (mean + extent + 1.0).floor().min(size as f64 - 1.0);
    if hi < lo {
        None
    } else {
        Some((lo as usize, hi as usize))
    }
}

/// Per-tile lists of splat slots, each in compositing order.
pub fn bin_splats(
    splats: &[Splat2D],
    width: usize,
    height: usize,
    tile: usize,
) -> (usize, Vec<Vec<usize>>) {
    let tiles_x = width.div_ceil(tile);
    let tiles_y = height.div_ceil(tile);
    let mut bins = vec![Vec::new(); tiles_x * tiles_y];
    for (slot, s) in splats.iter().enumerate() {
        let (Some((x0, x1)), Some((y0, y1))) = (
            pixel_span(s.mean[0], s.extent[0], width),
            pixel_span(s.mean[1], s.extent[1], height),
        ) else {
            continue;
        };
        for ty in y0 / tile..=y1 / tile {
            for tx in x0 / tile..=x1 / tile {
                bins[ty * tiles_x + tx].push(slot);
            }
        }
    }
    (tiles_x, bins)
}

fn finish(mut b: RenderBuffers, cfg: &RenderConfig) -> RenderBuffers {
    if !cfg.record_contributions {
        b.contributions = Vec::new();
    }
    b
}

fn assemble(
    width: usize,
    height: usize,
    splats: Vec<Splat2D>,
    pixels: Vec<PixelOut>,
) -> RenderBuffers {
    let mut b = RenderBuffers {
        width,
        height,
        color: Vec::with_capacity(pixels.len()),
        depth: Vec::with_capacity(pixels.len()),
        accum_alpha: Vec::with_capacity(pixels.len()),
        gs_flow: Vec::with_capacity(pixels.len()),
        contributions: Vec::with_capacity(pixels.len()),
        splats,
    };
    for p in pixels {
        b.color.push(p.color);
        b.depth.push(p.depth);
        b.accum_alpha.push(p.accum);
        b.gs_flow.push(p.flow);
        b.contributions.push(p.contributions);
    }
    b
}

/// Tile-based compositing of sorted splats. `flow`, when given, holds one
/// 2-vector per splat slot and is accumulated into `gs_flow`.
pub fn rasterize(
    splats: Vec<Splat2D>,
    flow: Option<&[[f64; 2]]>,
    width: usize,
    height: usize,
    background: [f64; 3],
    cfg: &RenderConfig,
) -> RenderBuffers {
    let tile = cfg.tile_size.max(1);
    let (tiles_x, bins) = bin_splats(&splats, width, height, tile);
    let tile_pixels: Vec<Vec<PixelOut>> = exec::map_range(bins.len(), |t| {
        let (tx, ty) = (t % tiles_x, t / tiles_x);
        let mut out = Vec::with_capacity(tile * tile);
        for y in ty * tile..((ty + 1) * tile).min(height) {
            for x in tx * tile..((tx + 1) * tile).min(width) {
                out.push(shade_pixel(
                    x as f64,
                    y as f64,
                    &splats,
                    bins[t].iter().copied(),
                    flow,
                    background,
                    cfg,
                ));
            }
        }
        out
    });
    let mut pixels = vec![PixelOut::default(); width * height];
    for (t, tile_out) in tile_pixels.into_iter().enumerate() {
        let (tx, ty) = (t % tiles_x, t / tiles_x);
        let x0 = tx * tile;
        let x1 = ((tx + 1) * tile).min(width);
        for (k, p) in tile_out.into_iter().enumerate() {
            let row = ty * tile + k / (x1 - x0);
            let col = x0 + k % (x1 - x0);
            pixels[row * width + col] = p;
        }
    }
    finish(assemble(width, height, splats, pixels), cfg)
}

/// Per-pixel loop over every splat. Reference oracle for [`rasterize`].
pub fn rasterize_naive(
    splats: Vec<Splat2D>,
    flow: Option<&[[f64; 2]]>,
    width: usize,
    height: usize,
    background: [f64; 3],
    cfg: &RenderConfig,
) -> RenderBuffers {
    let mut pixels = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            pixels.push(shade_pixel(
                x as f64,
                y as f64,
                &splats,
                0..splats.len(),
                flow,
                background,
                cfg,
            ));
        }
    }
    finish(assemble(width, height, splats, pixels), cfg)
}

pub fn render(scene: &GaussianScene, cam: &Camera) -> Result<RenderBuffers, RenderError> {
    render_with(scene, cam, &RenderConfig::default())
}

pub fn render_with(
    scene: &GaussianScene,
    cam: &Camera,
    cfg: &RenderConfig,
) -> Result<RenderBuffers, RenderError> {
    if scene.is_empty() {
        return Err(RenderError::EmptyScene);
    }
    let splats = project_scene(scene, cam);
    let intr = &cam.intrinsics;
    Ok(rasterize(
        splats,
        None,
        intr.width,
        intr.height,
        scene.background,
        cfg,
    ))
}

/// Splat-mean displacement `μ_i,t − μ_i,0` for each slot of `splats0`;
/// zero when the Gaussian is culled at time t.
pub fn splat_displacements(
    splats0: &[Splat2D],
    scene_t: &GaussianScene,
    cam: &Camera,
) -> Vec<[f64; 2]> {
    exec::map_slice(splats0, |s| {
        match project_gaussian(&scene_t.gaussians[s.index], s.index, cam) {
            Some(st) => [st.mean[0] - s.mean[0], st.mean[1] - s.mean[1]],
            None => [0.0, 0.0],
        }
    })
}

/// Render `scene0` with the dynamic Gaussian flow channel towards `scene_t`.
/// Blend weights come from `scene0`; both scenes are projected through `cam`.
pub fn render_with_flow(
    scene0: &GaussianScene,
    scene_t: &GaussianScene,
    cam: &Camera,
    weighting: FlowWeighting,
    cfg: &RenderConfig,
) -> Result<RenderBuffers, RenderError> {
    if scene0.is_empty() {
        return Err(RenderError::EmptyScene);
    }
    if scene0.len() != scene_t.len() {
        return Err(RenderError::CountMismatch {
            reference: scene0.len(),
            other: scene_t.len(),
        });
    }
    let splats = project_scene(scene0, cam);
    let disp = splat_displacements(&splats, scene_t, cam);
    let intr = &cam.intrinsics;
    let mut b = rasterize(
        splats,
        Some(&disp),
        intr.width,
        intr.height,
        scene0.background,
        cfg,
    );
    if weighting == FlowWeighting::Normalized {
        for (f, &a) in b.gs_flow.iter_mut().zip(&b.accum_alpha) {
            if a > COVERAGE_EPS {
                f[0] /= a;
                f[1] /= a;
            } else {
                *f = [0.0, 0.0];
            }
        }
    }
    Ok(b)
}

/// Dynamic Gaussian flow image, in pixels of displacement between the two scenes.
pub fn render_gaussian_flow(
    scene0: &GaussianScene,
    scene_t: &GaussianScene,
    cam: &Camera,
) -> Result<FlowMap, RenderError> {
    let b = render_with_flow(
        scene0,
        scene_t,
        cam,
        FlowWeighting::Unnormalized,
        &RenderConfig::default(),
    )?;
    Ok(FlowMap::new(
        b.width,
        b.height,
        FlowUnits::Pixels,
        b.gs_flow,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{Gaussian3D, Intrinsics, Pose};
    use proptest::prelude::*;

    fn splat(
        mean: [f64; 2],
        var: f64,
        depth: f64,
        opacity: f64,
        color: [f64; 3],
        index: usize,
    ) -> Splat2D {
        Splat2D {
            mean,
            cov: [var, 0.0, var],
            conic: [1.0 / var, 0.0, 1.0 / var],
            depth,
            opacity,
            color,
            index,
            extent: [3.0 * var.sqrt(); 2],
        }
    }

    #[test]
    fn single_splat_color() {
        let s = splat([2.0, 2.0], 1.0, 1.0, 0.999, [1.0, 0.0, 0.0], 0);
        let b = rasterize(vec![s], None, 5, 5, [0.0; 3], &RenderConfig::default());
        let p = b.pixel(2, 2);
        assert!((b.color[p][0] - 0.999).abs() < 1e-12);
        assert_eq!(b.color[p][1], 0.0);
        assert_eq!(b.depth[p], 1.0);
    }

    #[test]
    fn two_splat_composite() {
        let front = splat([2.0, 2.0], 1.0, 1.0, 0.5, [1.0, 0.0, 0.0], 0);
        let back = splat([2.0, 2.0], 1.0, 2.0, 1.0, [0.0, 0.0, 1.0], 1);
        let mut v = vec![back, front];
        sort_splats(&mut v);
        let b = rasterize(v, None, 5, 5, [0.0; 3], &RenderConfig::default());
        let c = b.color[b.pixel(2, 2)];
        assert!((c[0] - 0.5).abs() < 1e-12);
        assert!((c[2] - 0.4995).abs() < 1e-12);
        let contribs = &b.contributions[b.pixel(2, 2)];
        assert_eq!(
            contribs.iter().map(|c| c.index).collect::<Vec<_>>(),
            vec![0, 1]
        );
    }

    #[test]
    fn uncovered_pixel_is_background() {
        let s = splat([1.0, 1.0], 0.5, 1.0, 0.9, [1.0, 1.0, 1.0], 0);
        let b = rasterize(
            vec![s],
            None,
            40,
            40,
            [0.2, 0.3, 0.4],
            &RenderConfig::default(),
        );
        let p = b.pixel(35, 35);
        assert_eq!(b.color[p], [0.2, 0.3, 0.4]);
        assert_eq!(b.depth[p], 0.0);
        assert_eq!(b.accum_alpha[p], 0.0);
        assert!(b.contributions[p].is_empty());
    }

    fn random_splats(seed: u64, n: usize, w: usize, h: usize) -> Vec<Splat2D> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut v: Vec<Splat2D> = (0..n)
            .map(|i| {
                let var_x: f64 = rng.gen_range(0.5..30.0);
                let var_y: f64 = rng.gen_range(0.5..30.0);
                let cxy = rng.gen_range(-0.8..0.8) * (var_x * var_y).sqrt();
                let cov = [var_x, cxy, var_y];
                let conic = super::super::project::invert_cov2d(cov).unwrap();
                Splat2D {
                    mean: [
                        rng.gen_range(-5.0..w as f64 + 5.0),
                        rng.gen_range(-5.0..h as f64 + 5.0),
                    ],
                    cov,
                    conic,
                    depth: rng.gen_range(0.5..5.0),
                    opacity: rng.gen_range(0.0..1.0),
                    color: [rng.gen(), rng.gen(), rng.gen()],
                    index: i,
                    extent: [3.0 * var_x.sqrt(), 3.0 * var_y.sqrt()],
                }
            })
            .collect();
        sort_splats(&mut v);
        v
    }

    #[test]
    fn tiled_matches_naive_bitwise() {
        for seed in 0..4 {
            let (w, h) = (53, 37);
            let splats = random_splats(seed, 80, w, h);
            let flow: Vec<[f64; 2]> = (0..splats.len())
                .map(|i| [i as f64 * 0.1, -(i as f64)])
                .collect();
            for cfg in [RenderConfig::default(), RenderConfig::exact()] {
                let a = rasterize(splats.clone(), Some(&flow), w, h, [0.1, 0.2, 0.3], &cfg);
                let b = rasterize_naive(splats.clone(), Some(&flow), w, h, [0.1, 0.2, 0.3], &cfg);
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn exact_mode_records_every_contribution() {
        let splats = random_splats(9, 40, 20, 20);
        let b = rasterize(
            splats.clone(),
            None,
            20,
            20,
            [0.0; 3],
            &RenderConfig::exact(),
        );
        for y in 0..20 {
            for x in 0..20 {
                let p = b.pixel(x, y);
                // Brute-force compositing without any thresholds.
                let mut t = 1.0;
                let mut expected = Vec::new();
                for s in &splats {
                    if s.mahalanobis2(x as f64, y as f64) > 9.0 {
                        continue;
                    }
                    let a = (s.opacity * (-0.5 * s.mahalanobis2(x as f64, y as f64)).exp())
                        .min(MAX_ALPHA);
                    if a > 0.0 {
                        expected.push((s.index, t * a));
                        t *= 1.0 - a;
                    }
                }
                let got: Vec<(usize, f64)> = b.contributions[p]
                    .iter()
                    .map(|c| (c.index, c.weight))
                    .collect();
                assert_eq!(got, expected);
                assert!((b.accum_alpha[p] - (1.0 - t)).abs() < 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn transmittance_telescopes(alphas in prop::collection::vec(0.0f64..0.999, 1..30)) {
            let splats: Vec<Splat2D> = alphas
                .iter()
                .enumerate()
                .map(|(i, &a)| splat([0.0, 0.0], 1.0, 1.0 + i as f64, a, [1.0; 3], i))
                .collect();
            let b = rasterize(splats, None, 1, 1, [0.0; 3], &RenderConfig::exact());
            let prod: f64 = alphas.iter().map(|a| 1.0 - a).product();
            prop_assert!((b.accum_alpha[0] - (1.0 - prod)).abs() < 1e-9);
            let ws = &b.contributions[0];
            for k in 1..ws.len() {
                // T_{k+1} = T_k (1 - α_k): w_k / α_k is the transmittance at k.
                let tk = ws[k - 1].weight / alphas[k - 1];
                prop_assert!((ws[k].weight / alphas[k] - tk * (1.0 - alphas[k - 1])).abs() < 1e-12);
            }
        }

        #[test]
        fn gaussian_order_does_not_matter(seed in 0u64..1000) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let intr = Intrinsics::new(40.0, 40.0, 16.0, 16.0, 32, 32).unwrap();
            let cam = Camera::new(intr, Pose::identity());
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut gs: Vec<Gaussian3D> = (0..12)
                .map(|i| Gaussian3D::isotropic(
                    [0.1 * (i % 4) as f64 - 0.15, 0.1 * (i / 4) as f64 - 0.1, 1.0 + 0.05 * i as f64],
                    0.08, 0.7, [0.1 * i as f64 / 1.2, 0.5, 1.0 - 0.08 * i as f64]))
                .collect();
            let base = render(&GaussianScene::new(gs.clone()), &cam).unwrap();
            gs.shuffle(&mut rng);
            let shuffled = render(&GaussianScene::new(gs), &cam).unwrap();
            prop_assert_eq!(&base.color, &shuffled.color);
            prop_assert_eq!(&base.depth, &shuffled.depth);
        }
    }

    #[test]
    fn flow_examples() {
        let a = splat([2.0, 2.0], 1.0, 1.0, 0.999, [1.0; 3], 0);
        let b = rasterize(
            vec![a],
            Some(&[[3.0, 1.0]]),
            5,
            5,
            [0.0; 3],
            &RenderConfig::default(),
        );
        let f = b.gs_flow[b.pixel(2, 2)];
        assert!((f[0] - 2.997).abs() < 1e-12 && (f[1] - 0.999).abs() < 1e-12);

        let front = splat([2.0, 2.0], 1.0, 1.0, 0.5, [1.0; 3], 0);
        let back = splat([2.0, 2.0], 1.0, 2.0, 1.0, [1.0; 3], 1);
        let b = rasterize(
            vec![front, back],
            Some(&[[2.0, 0.0], [4.0, 0.0]]),
            5,
            5,
            [0.0; 3],
            &RenderConfig::default(),
        );
        let f = b.gs_flow[b.pixel(2, 2)];
        assert!((f[0] - 2.998).abs() < 1e-12 && f[1] == 0.0);
    }

    #[test]
    fn flow_scales_linearly() {
        let splats = random_splats(3, 30, 24, 24);
        let disp: Vec<[f64; 2]> = (0..splats.len())
            .map(|i| [0.25 * i as f64, 1.0 - 0.5 * i as f64])
            .collect();
        let scaled: Vec<[f64; 2]> = disp.iter().map(|d| [4.0 * d[0], 4.0 * d[1]]).collect();
        let a = rasterize(
            splats.clone(),
            Some(&disp),
            24,
            24,
            [0.0; 3],
            &RenderConfig::default(),
        );
        let b = rasterize(
            splats,
            Some(&scaled),
            24,
            24,
            [0.0; 3],
            &RenderConfig::default(),
        );
        for (x, y) in a.gs_flow.iter().zip(&b.gs_flow) {
            // Scaling by a power of two is exact in floating point.
            assert_eq!([4.0 * x[0], 4.0 * x[1]], *y);
        }
    }

    #[test]
    fn unchanged_scene_has_zero_flow() {
        let intr = Intrinsics::new(40.0, 40.0, 16.0, 16.0, 32, 32).unwrap();
        let cam = Camera::new(intr, Pose::identity());
        let scene = GaussianScene::new(vec![
            Gaussian3D::isotropic([0.0, 0.0, 1.0], 0.1, 0.8, [1.0; 3]),
            Gaussian3D::isotropic([0.05, 0.0, 1.5], 0.2, 0.8, [1.0; 3]),
        ]);
        let f = render_gaussian_flow(&scene, &scene, &cam).unwrap();
        assert!(f.data.iter().all(|v| *v == [0.0, 0.0]));
        let mut other = scene.clone();
        other.gaussians.pop();
        assert!(matches!(
            render_gaussian_flow(&scene, &other, &cam),
            Err(RenderError::CountMismatch { .. })
        ));
    }
}
