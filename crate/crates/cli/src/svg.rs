//! Hand-rolled static SVG plots of forecast dumps.
//!
//! Three views per scene: observed/predicted odometry against time with a
//! ±2σ band from the fused variance, a bird's-eye view of dead-reckoned
//! ego modes, and the pixel-frame box trajectories with the final sampled
//! boxes. Everything is emitted with fixed-precision coordinates from
//! deterministic inputs, so the same dump always produces byte-identical
//! files.

use std::fmt::Write as _;

use egocast_core::dump::SceneForecast;
use egocast_core::ego::{dead_reckon, dead_reckon_poses, Pose2D, DT};
use egocast_core::error::{Error, Result};
use egocast_core::loc::{IMG_H, IMG_W};
use egocast_core::synth::Scene;

const BLACK: &str = "#222222";
const GRAY: &str = "#999999";
const ACCENT: &str = "#d95f02";
const PALETTE: [&str; 6] = ["#7570b3", "#1b9e77", "#e7298a", "#66a61e", "#e6ab02", "#a6761d"];

/// The dump must describe the scene it is plotted against: same seed and
/// the same observed odometry window.
pub fn check_match(f: &SceneForecast, scene: &Scene) -> Result<()> {
    if f.scene_seed != scene.seed {
        return Err(Error::contract(format!(
            "forecast is for scene seed {} but the scene has seed {}",
            f.scene_seed, scene.seed
        )));
    }
    if scene.odom.len() < f.t_obs || f.obs_odom != scene.odom[..f.t_obs] {
        return Err(Error::contract(format!(
            "forecast for scene seed {} does not match the scene's observed odometry",
            f.scene_seed
        )));
    }
    Ok(())
}

// ---- low-level SVG assembly -------------------------------------------------

struct Svg {
    w: f64,
    h: f64,
    body: String,
}

fn fx(v: f64) -> String {
    format!("{v:.2}")
}

impl Svg {
    fn new(w: f64, h: f64) -> Svg {
        Svg { w, h, body: String::new() }
    }

    fn finish(self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" \
             viewBox=\"0 0 {w} {h}\">\n<rect x=\"0\" y=\"0\" width=\"{w}\" height=\"{h}\" \
             fill=\"#ffffff\"/>\n{body}</svg>\n",
            w = fx(self.w),
            h = fx(self.h),
            body = self.body
        )
    }

    fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str, width: f64) {
        let _ = writeln!(
            self.body,
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{stroke}\" stroke-width=\"{}\"/>",
            fx(x1), fx(y1), fx(x2), fx(y2), fx(width)
        );
    }

    fn polyline(&mut self, pts: &str, stroke: &str, width: f64, dash: Option<&str>) {
        let dash = dash.map(|d| format!(" stroke-dasharray=\"{d}\"")).unwrap_or_default();
        let _ = writeln!(
            self.body,
            "<polyline points=\"{pts}\" fill=\"none\" stroke=\"{stroke}\" stroke-width=\"{}\"{dash}/>",
            fx(width)
        );
    }

    fn polygon(&mut self, pts: &str, fill: &str, opacity: f64) {
        let _ = writeln!(
            self.body,
            "<polygon points=\"{pts}\" fill=\"{fill}\" fill-opacity=\"{}\" stroke=\"none\"/>",
            fx(opacity)
        );
    }

    fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, stroke: &str, width: f64) {
        let _ = writeln!(
            self.body,
            "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"{stroke}\" \
             stroke-width=\"{}\"/>",
            fx(x), fx(y), fx(w.max(0.0)), fx(h.max(0.0)), fx(width)
        );
    }

    fn circle(&mut self, x: f64, y: f64, r: f64, fill: &str) {
        let _ = writeln!(
            self.body,
            "<circle cx=\"{}\" cy=\"{}\" r=\"{}\" fill=\"{fill}\"/>",
            fx(x), fx(y), fx(r)
        );
    }

    fn text(&mut self, x: f64, y: f64, size: f64, anchor: &str, content: &str) {
        let _ = writeln!(
            self.body,
            "<text x=\"{}\" y=\"{}\" font-size=\"{}\" font-family=\"sans-serif\" \
             text-anchor=\"{anchor}\" fill=\"{BLACK}\">{content}</text>",
            fx(x), fx(y), fx(size)
        );
    }
}

/// Maps a data rectangle onto a pixel viewport (y grows upward unless
/// `y_down`, which image-frame plots use).
#[derive(Clone, Copy)]
struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
    px: f64,
    py: f64,
    pw: f64,
    ph: f64,
    y_down: bool,
}

impl Frame {
    fn new(xr: (f64, f64), yr: (f64, f64), view: (f64, f64, f64, f64), y_down: bool) -> Frame {
        let (x0, x1) = pad_range(xr);
        let (y0, y1) = pad_range(yr);
        Frame { x0, x1, y0, y1, px: view.0, py: view.1, pw: view.2, ph: view.3, y_down }
    }

    fn mx(&self, x: f64) -> f64 {
        self.px + (x - self.x0) / (self.x1 - self.x0) * self.pw
    }

    fn my(&self, y: f64) -> f64 {
        let t = (y - self.y0) / (self.y1 - self.y0);
        if self.y_down {
            self.py + t * self.ph
        } else {
            self.py + self.ph - t * self.ph
        }
    }

    fn points(&self, pts: impl Iterator<Item = (f64, f64)>) -> String {
        let mut s = String::new();
        for (x, y) in pts {
            if !s.is_empty() {
                s.push(' ');
            }
            let _ = write!(s, "{},{}", fx(self.mx(x)), fx(self.my(y)));
        }
        s
    }

    fn axes(&self, svg: &mut Svg, title: &str, xlabel: &str, ylabel: &str) {
        svg.rect(self.px, self.py, self.pw, self.ph, BLACK, 1.0);
        for t in ticks(self.x0, self.x1) {
            let x = self.mx(t);
            svg.line(x, self.py + self.ph, x, self.py + self.ph + 4.0, BLACK, 1.0);
            svg.text(x, self.py + self.ph + 16.0, 10.0, "middle", &fmt_num(t));
        }
        for t in ticks(self.y0, self.y1) {
            let y = self.my(t);
            svg.line(self.px - 4.0, y, self.px, y, BLACK, 1.0);
            svg.text(self.px - 7.0, y + 3.5, 10.0, "end", &fmt_num(t));
        }
        svg.text(self.px + self.pw / 2.0, self.py - 8.0, 12.0, "middle", title);
        svg.text(self.px + self.pw / 2.0, self.py + self.ph + 32.0, 11.0, "middle", xlabel);
        svg.text(self.px - 38.0, self.py + self.ph / 2.0, 11.0, "middle", ylabel);
    }
}

fn pad_range((lo, hi): (f64, f64)) -> (f64, f64) {
    if !(lo.is_finite() && hi.is_finite()) {
        return (0.0, 1.0);
    }
    let span = hi - lo;
    if span <= 1e-9 {
        return (lo - 1.0, hi + 1.0);
    }
    (lo - 0.06 * span, hi + 0.06 * span)
}

fn min_max(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in vals {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo > hi {
        (0.0, 1.0)
    } else {
        (lo, hi)
    }
}

/// Tick positions: a 1/2/5 step sized for about five intervals.
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = hi - lo;
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.abs().log10().floor());
    let norm = raw / mag;
    let step = mag
        * if norm < 1.5 {
            1.0
        } else if norm < 3.5 {
            2.0
        } else if norm < 7.5 {
            5.0
        } else {
            10.0
        };
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-9 * span {
        // Snap -0.0 to 0.0 so labels are stable.
        out.push(if t == 0.0 { 0.0 } else { t });
        t += step;
    }
    out
}

fn fmt_num(v: f64) -> String {
    if v.abs() < 1e-12 {
        return "0".to_string();
    }
    let mut s = format!("{v:.3}");
    while s.ends_with('0') {
        s.pop();
    }
    if s.ends_with('.') {
        s.pop();
    }
    s
}

// ---- the three plot kinds ------------------------------------------------------

/// Odometry against time: noisy observations, clean truth, fused mean with
/// a ±2σ band, and the sampled modes; one panel for speed, one for yaw
/// rate. Runs without any forecast content (axes and truth only).
pub fn ego_odometry_svg(f: &SceneForecast, scene: &Scene) -> String {
    let mut svg = Svg::new(760.0, 560.0);
    let total = f.t_obs + f.horizon;
    let t_at = |i: usize| (i + 1) as f64 * DT;
    let boundary = f.t_obs as f64 * DT;

    for (panel, (title, dim)) in [("speed [m/s]", 0usize), ("yaw rate [rad/s]", 1usize)]
        .into_iter()
        .enumerate()
    {
        let pick = |s: &egocast_core::ego::OdomStep| if dim == 0 { s.v } else { s.yaw_rate };

        let mut vals: Vec<f64> = Vec::new();
        vals.extend(scene.odom_clean[..f.t_obs].iter().map(&pick));
        vals.extend(f.obs_odom.iter().map(&pick));
        vals.extend(f.gt_future_odom.iter().map(&pick));
        for g in &f.ego_fused {
            vals.push(g.mean[dim] + 2.0 * g.var[dim].sqrt());
            vals.push(g.mean[dim] - 2.0 * g.var[dim].sqrt());
        }
        for m in &f.ego_modes {
            vals.extend(m.iter().map(&pick));
        }

        let view = (70.0, 40.0 + panel as f64 * 270.0, 650.0, 200.0);
        let frame = Frame::new((0.0, total as f64 * DT), min_max(vals.into_iter()), view, false);
        frame.axes(&mut svg, title, "time [s]", "");

        // Observation/forecast boundary.
        svg.line(frame.mx(boundary), frame.py, frame.mx(boundary), frame.py + frame.ph, GRAY, 0.8);

        // ±2σ band from the fused moments.
        if !f.ego_fused.is_empty() {
            let upper = f
                .ego_fused
                .iter()
                .enumerate()
                .map(|(i, g)| (t_at(f.t_obs + i), g.mean[dim] + 2.0 * g.var[dim].sqrt()));
            let lower = f
                .ego_fused
                .iter()
                .enumerate()
                .rev()
                .map(|(i, g)| (t_at(f.t_obs + i), g.mean[dim] - 2.0 * g.var[dim].sqrt()));
            let pts = frame.points(upper.chain(lower));
            svg.polygon(&pts, ACCENT, 0.18);
        }

        // Sampled modes (beyond the mean) come first so the mean stays visible.
        for (m, mode) in f.ego_modes.iter().enumerate().skip(1) {
            let pts = frame
                .points(mode.iter().enumerate().map(|(i, s)| (t_at(f.t_obs + i), pick(s))));
            svg.polyline(&pts, PALETTE[(m - 1) % PALETTE.len()], 0.9, None);
        }

        // Clean truth across the whole window.
        let truth = scene.odom_clean[..f.t_obs]
            .iter()
            .enumerate()
            .map(|(i, s)| (t_at(i), pick(s)))
            .chain(
                f.gt_future_odom
                    .iter()
                    .enumerate()
                    .map(|(i, s)| (t_at(f.t_obs + i), pick(s))),
            );
        svg.polyline(&frame.points(truth), BLACK, 1.4, None);

        // Noisy observations.
        for (i, s) in f.obs_odom.iter().enumerate() {
            svg.circle(frame.mx(t_at(i)), frame.my(pick(s)), 2.2, GRAY);
        }

        // Forecast mean: fused mean when present, else the first mode
        // (analytic baselines), dashed to stand apart from the truth.
        if !f.ego_fused.is_empty() {
            let pts = frame.points(
                f.ego_fused.iter().enumerate().map(|(i, g)| (t_at(f.t_obs + i), g.mean[dim])),
            );
            svg.polyline(&pts, ACCENT, 1.6, None);
        } else if let Some(mode) = f.ego_modes.first() {
            let pts = frame
                .points(mode.iter().enumerate().map(|(i, s)| (t_at(f.t_obs + i), pick(s))));
            svg.polyline(&pts, ACCENT, 1.6, Some("5 3"));
        }
    }

    svg.text(
        380.0,
        20.0,
        13.0,
        "middle",
        &format!("scene {} — {} — odometry forecast", f.scene_seed, f.variant),
    );
    svg.finish()
}

/// Bird's-eye view: the clean past track, the clean future, and one
/// dead-reckoned trajectory per ego mode, all in the frame of the last
/// observed pose (forward is +x).
pub fn birdseye_svg(f: &SceneForecast, scene: &Scene) -> String {
    let mut svg = Svg::new(560.0, 560.0);

    // Past positions, re-expressed relative to the end-of-observation pose.
    let past_world = dead_reckon(&scene.odom_clean[..f.t_obs], &Pose2D::identity());
    let end = dead_reckon_poses(&scene.odom_clean[..f.t_obs], &Pose2D::identity())
        .last()
        .copied()
        .unwrap_or_else(Pose2D::identity);
    let into_end = |p: [f64; 2]| -> (f64, f64) {
        let dx = p[0] - end.trans[0];
        let dy = p[1] - end.trans[1];
        (end.rot[0][0] * dx + end.rot[1][0] * dy, end.rot[0][1] * dx + end.rot[1][1] * dy)
    };
    let mut past = vec![into_end([0.0, 0.0])];
    past.extend(past_world.iter().map(|&p| into_end(p)));

    let gt: Vec<(f64, f64)> =
        dead_reckon(&f.gt_future_odom, &Pose2D::identity()).iter().map(|p| (p[0], p[1])).collect();
    let modes: Vec<Vec<(f64, f64)>> = f
        .ego_modes
        .iter()
        .map(|m| dead_reckon(m, &Pose2D::identity()).iter().map(|p| (p[0], p[1])).collect())
        .collect();

    // Square, equal-aspect range over everything drawn.
    let all = past
        .iter()
        .chain(gt.iter())
        .chain(modes.iter().flatten())
        .chain(std::iter::once(&(0.0, 0.0)));
    let (xs, ys): (Vec<f64>, Vec<f64>) = all.map(|&(x, y)| (x, y)).unzip();
    let (x0, x1) = min_max(xs.into_iter());
    let (y0, y1) = min_max(ys.into_iter());
    let cx = (x0 + x1) / 2.0;
    let cy = (y0 + y1) / 2.0;
    let half = ((x1 - x0).max(y1 - y0) / 2.0).max(1.0);

    let view = (70.0, 50.0, 440.0, 440.0);
    let frame = Frame::new((cx - half, cx + half), (cy - half, cy + half), view, false);
    frame.axes(&mut svg, "", "forward [m]", "left [m]");

    svg.polyline(&frame.points(past.iter().copied()), GRAY, 1.2, Some("4 3"));
    for (m, mode) in modes.iter().enumerate().skip(1) {
        svg.polyline(
            &frame.points(mode.iter().copied()),
            PALETTE[(m - 1) % PALETTE.len()],
            1.0,
            None,
        );
    }
    if let Some(first) = modes.first() {
        svg.polyline(&frame.points(first.iter().copied()), ACCENT, 1.8, None);
    }
    svg.polyline(&frame.points(gt.iter().copied()), BLACK, 1.6, None);
    svg.circle(frame.mx(0.0), frame.my(0.0), 3.5, BLACK);

    svg.text(
        280.0,
        24.0,
        13.0,
        "middle",
        &format!("scene {} — {} — bird's-eye ego modes", f.scene_seed, f.variant),
    );
    svg.finish()
}

/// Pixel-frame view: observed box centers, the true future track with its
/// final box, and every sampled trajectory with its final sampled box.
pub fn boxes_svg(f: &SceneForecast) -> String {
    let mut svg = Svg::new(760.0, 540.0);
    let view = (70.0, 50.0, 640.0, 400.0);
    let frame = Frame::new((0.0, IMG_W), (0.0, IMG_H), view, true);
    frame.axes(&mut svg, "", "u [px]", "v [px]");

    for target in &f.targets {
        let px = |b: &egocast_core::loc::BoxState| -> (f64, f64) { (b.cx * IMG_W, b.cy * IMG_H) };

        for (m, traj) in target.trajectories.iter().enumerate() {
            let color = if m == 0 { ACCENT } else { PALETTE[(m - 1) % PALETTE.len()] };
            svg.polyline(&frame.points(traj.iter().map(px)), color, 1.0, None);
            if let Some(last) = traj.last() {
                let b = last.to_pixels();
                let (x, y) = (frame.mx(b.cx - b.w / 2.0), frame.my(b.cy - b.h / 2.0));
                let (x2, y2) = (frame.mx(b.cx + b.w / 2.0), frame.my(b.cy + b.h / 2.0));
                svg.rect(x, y, x2 - x, y2 - y, color, 1.2);
            }
        }

        svg.polyline(&frame.points(target.obs_boxes.iter().map(px)), GRAY, 1.2, Some("4 3"));
        svg.polyline(&frame.points(target.gt_future_boxes.iter().map(px)), BLACK, 1.6, None);
        if let Some(last) = target.gt_future_boxes.last() {
            let b = last.to_pixels();
            let (x, y) = (frame.mx(b.cx - b.w / 2.0), frame.my(b.cy - b.h / 2.0));
            let (x2, y2) = (frame.mx(b.cx + b.w / 2.0), frame.my(b.cy + b.h / 2.0));
            svg.rect(x, y, x2 - x, y2 - y, BLACK, 1.6);
        }
    }

    svg.text(
        380.0,
        24.0,
        13.0,
        "middle",
        &format!("scene {} — {} — box forecasts (image frame)", f.scene_seed, f.variant),
    );
    svg.finish()
}
