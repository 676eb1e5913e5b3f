use nalgebra::DMatrix;
use rayon::prelude::*;

use super::project::{depth_order, project_backward, project_slice, row_params};
use super::{ProjectedGrad, RenderOutput, ScreenGaussian, ALPHA_MAX, ALPHA_MIN, TILE_SIZE, TRANSMITTANCE_MIN};
use crate::camera::Camera;
use crate::gaussian::NUM_PARAMS;
use crate::image::Image;

struct TileGrid {
    cols: usize,
    rows: usize,
    /// Per tile, positions into the depth-sorted splat list.
    lists: Vec<Vec<u32>>,
}

impl TileGrid {
    fn build(splats: &[ScreenGaussian], cam: &Camera) -> Self {
        let cols = cam.width.div_ceil(TILE_SIZE);
        let rows = cam.height.div_ceil(TILE_SIZE);
        let mut lists = vec![Vec::new(); cols * rows];
        let ts = TILE_SIZE as f64;
        for (pos, s) in splats.iter().enumerate() {
            if s.radius <= 0.0 {
                continue;
            }
            let x0 = ((s.mean2d[0] - s.radius) / ts).floor().max(0.0);
            let x1 = ((s.mean2d[0] + s.radius) / ts).floor().min(cols as f64 - 1.0);
            let y0 = ((s.mean2d[1] - s.radius) / ts).floor().max(0.0);
            let y1 = ((s.mean2d[1] + s.radius) / ts).floor().min(rows as f64 - 1.0);
            if x0 > x1 || y0 > y1 {
                continue;
            }
            for ty in y0 as usize..=y1 as usize {
                for tx in x0 as usize..=x1 as usize {
                    lists[ty * cols + tx].push(pos as u32);
                }
            }
        }
        Self { cols, rows, lists }
    }

    fn pixels(&self, tile: usize, cam: &Camera) -> impl Iterator<Item = (usize, usize)> {
        let (tx, ty) = (tile % self.cols, tile / self.cols);
        let xs = tx * TILE_SIZE..((tx + 1) * TILE_SIZE).min(cam.width);
        let ys = ty * TILE_SIZE..((ty + 1) * TILE_SIZE).min(cam.height);
        ys.flat_map(move |y| xs.clone().map(move |x| (x, y)))
    }

    fn len(&self) -> usize {
        self.cols * self.rows
    }
}

fn sorted_splats(slice: &DMatrix<f64>, cam: &Camera) -> Vec<ScreenGaussian> {
    let mut splats = project_slice(slice, cam);
    splats.sort_by(depth_order);
    splats
}

#[derive(Clone, Copy)]
struct Contribution {
    pos: u32,
    alpha: f64,
    falloff: f64,
    transmittance: f64,
    clamped: bool,
    dx: f64,
    dy: f64,
}

#[derive(Default, Clone, Copy)]
struct PixelResult {
    color: [f64; 3],
    depth: f64,
    transmittance: f64,
}

/// Front-to-back compositing of one pixel over a depth-sorted list.
fn composite(
    px: f64,
    py: f64,
    list: &[u32],
    splats: &[ScreenGaussian],
    mut record: Option<&mut Vec<Contribution>>,
) -> PixelResult {
    let mut out = PixelResult { transmittance: 1.0, ..Default::default() };
    for &pos in list {
        let s = &splats[pos as usize];
        let dx = px - s.mean2d[0];
        let dy = py - s.mean2d[1];
        let power = -0.5 * (s.conic[0] * dx * dx + 2.0 * s.conic[1] * dx * dy + s.conic[2] * dy * dy);
        if power > 0.0 {
            continue;
        }
        let falloff = power.exp();
        let raw = s.alpha_base * falloff;
        let alpha = raw.min(ALPHA_MAX);
        if alpha < ALPHA_MIN {
            continue;
        }
        let next = out.transmittance * (1.0 - alpha);
        if next < TRANSMITTANCE_MIN {
            break;
        }
        let w = alpha * out.transmittance;
        for c in 0..3 {
            out.color[c] += s.color[c] * w;
        }
        out.depth += s.depth * w;
        if let Some(rec) = record.as_deref_mut() {
            rec.push(Contribution {
                pos,
                alpha,
                falloff,
                transmittance: out.transmittance,
                clamped: raw > ALPHA_MAX,
                dx,
                dy,
            });
        }
        out.transmittance = next;
    }
    out
}

/// Tile-based forward rasterization of one slice (`N × 59` raw rows).
pub fn render(slice: &DMatrix<f64>, cam: &Camera) -> RenderOutput {
    let splats = sorted_splats(slice, cam);
    let grid = TileGrid::build(&splats, cam);
    let tiles: Vec<Vec<(usize, usize, PixelResult)>> = (0..grid.len())
        .into_par_iter()
        .map(|t| {
            let list = &grid.lists[t];
            grid.pixels(t, cam)
                .map(|(x, y)| (x, y, composite(x as f64 + 0.5, y as f64 + 0.5, list, &splats, None)))
                .collect()
        })
        .collect();

    let mut out = RenderOutput::black(cam.width, cam.height);
    for tile in tiles {
        for (x, y, p) in tile {
            for c in 0..3 {
                out.color.set(x, y, c, p.color[c]);
            }
            out.depth.set(x, y, 0, p.depth);
            out.alpha.set(x, y, 0, 1.0 - p.transmittance);
        }
    }
    out
}

/// Gradients of a scalar loss with respect to one rendered slice.
#[derive(Debug, Clone)]
pub struct RenderGradients {
    /// `N × 59`, with respect to the raw rows.
    pub params: DMatrix<f64>,
    /// Per Gaussian, gradient with respect to its pixel-space 2D mean (zero when culled).
    pub mean2d: Vec<[f64; 2]>,
    /// Whether the Gaussian survived projection culling.
    pub visible: Vec<bool>,
}

/// Backward pass of [`render`] for image-space gradients `d_color` (`H×W×3`)
/// and `d_depth` (`H×W×1`).
pub fn render_backward(slice: &DMatrix<f64>, cam: &Camera, d_color: &Image, d_depth: &Image) -> RenderGradients {
    assert_eq!((d_color.width(), d_color.height(), d_color.channels()), (cam.width, cam.height, 3));
    assert_eq!((d_depth.width(), d_depth.height(), d_depth.channels()), (cam.width, cam.height, 1));
    let n = slice.nrows();
    let splats = sorted_splats(slice, cam);
    let grid = TileGrid::build(&splats, cam);

    let partials: Vec<Vec<ProjectedGrad>> = (0..grid.len())
        .into_par_iter()
        .map(|t| {
            let list = &grid.lists[t];
            let mut local = vec![ProjectedGrad::default(); list.len()];
            if list.is_empty() {
                return local;
            }
            let slot: std::collections::HashMap<u32, usize> =
                list.iter().enumerate().map(|(i, &p)| (p, i)).collect();
            let mut contribs = Vec::new();
            for (x, y) in grid.pixels(t, cam) {
                let dc = [d_color.get(x, y, 0), d_color.get(x, y, 1), d_color.get(x, y, 2)];
                let dd = d_depth.get(x, y, 0);
                if dc == [0.0; 3] && dd == 0.0 {
                    continue;
                }
                contribs.clear();
                composite(x as f64 + 0.5, y as f64 + 0.5, list, &splats, Some(&mut contribs));
                backprop_pixel(&contribs, &splats, dc, dd, |pos, g| local[slot[&pos]].add(g));
            }
            local
        })
        .collect();

    let mut screen = vec![ProjectedGrad::default(); splats.len()];
    for (t, local) in partials.iter().enumerate() {
        for (i, g) in local.iter().enumerate() {
            screen[grid.lists[t][i] as usize].add(g);
        }
    }

    let mut params = DMatrix::zeros(n, NUM_PARAMS);
    let mut mean2d = vec![[0.0; 2]; n];
    let mut visible = vec![false; n];
    let rows: Vec<(usize, [f64; NUM_PARAMS])> = splats
        .par_iter()
        .zip(screen.par_iter())
        .map(|(s, g)| (s.index, project_backward(&row_params(slice, s.index), cam, g)))
        .collect();
    for ((idx, row), (s, g)) in rows.into_iter().zip(splats.iter().zip(&screen)) {
        debug_assert_eq!(idx, s.index);
        for (k, v) in row.iter().enumerate() {
            params[(idx, k)] = *v;
        }
        mean2d[idx] = g.mean2d;
        visible[idx] = true;
    }
    RenderGradients { params, mean2d, visible }
}

fn backprop_pixel(
    contribs: &[Contribution],
    splats: &[ScreenGaussian],
    dc: [f64; 3],
    dd: f64,
    mut emit: impl FnMut(u32, &ProjectedGrad),
) {
    let mut suffix_c = [0.0; 3];
    let mut suffix_z = 0.0;
    for k in contribs.iter().rev() {
        let s = &splats[k.pos as usize];
        let w = k.alpha * k.transmittance;
        let inv = 1.0 / (1.0 - k.alpha);
        let mut d_alpha = dd * (s.depth * k.transmittance - suffix_z * inv);
        for c in 0..3 {
            d_alpha += dc[c] * (s.color[c] * k.transmittance - suffix_c[c] * inv);
        }
        let mut g = ProjectedGrad { color: dc.map(|v| v * w), depth: dd * w, ..Default::default() };
        if !k.clamped {
            g.alpha_base = d_alpha * k.falloff;
            let d_power = d_alpha * k.alpha;
            let [a, b, c] = s.conic;
            g.mean2d = [d_power * (a * k.dx + b * k.dy), d_power * (b * k.dx + c * k.dy)];
            g.conic = [-0.5 * d_power * k.dx * k.dx, -d_power * k.dx * k.dy, -0.5 * d_power * k.dy * k.dy];
        }
        for c in 0..3 {
            suffix_c[c] += s.color[c] * w;
        }
        suffix_z += s.depth * w;
        emit(k.pos, &g);
    }
}
