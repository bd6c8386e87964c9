//! Analysis recipes. Each recipe is a pure function of the record log and the
//! analysis settings, producing one CSV table and one JSON summary.

use std::collections::BTreeMap;

use griffiths_core::analysis::{
    build_histogram, curve_crossing, dz_from_linear_slope, dz_from_nonlinear_slope, fit_tail_slope,
    linear_extrapolate, optimize_collapse, peak_with_jackknife, scan_dynamical_z, CurvePoint, ExponentEstimate,
    FitPolicy, RangePolicy, ScalingForm, SearchBox,
};
use griffiths_core::annealer::{map_s_to_beta_gamma, DeviceRecord, Schedule};
use griffiths_core::observables::{
    binder_ratio, ensemble_mean, global_nl_susceptibility, global_susceptibility, group_records,
    local_susceptibilities, Resampling,
};
use griffiths_core::qmc::MomentRecord;
use griffiths_core::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{AnalysisConfig, Mode};

pub struct Recipe {
    pub name: &'static str,
    pub mode: Mode,
    pub about: &'static str,
}

pub const RECIPES: &[Recipe] = &[
    Recipe { name: "binder", mode: Mode::Qmc, about: "Binder ratio per (L, beta, Gamma) and size crossings" },
    Recipe { name: "binder-collapse", mode: Mode::Qmc, about: "Binder collapse per beta, Gamma_c and nu extrapolated in T" },
    Recipe { name: "susceptibility", mode: Mode::Qmc, about: "global susceptibility beta N [<m^2>] and its collapse" },
    Recipe { name: "magnetization", mode: Mode::Qmc, about: "[<|m|>] and its collapse" },
    Recipe { name: "local-hist", mode: Mode::Qmc, about: "P(chi_loc) with tail fit and d/z'" },
    Recipe { name: "local-nl-hist", mode: Mode::Qmc, about: "P(chi_nlloc) with tail fit and d/z'" },
    Recipe { name: "global-hist", mode: Mode::Qmc, about: "P(chi) of per-instance <m^2> with tail fit" },
    Recipe { name: "global-nl-hist", mode: Mode::Qmc, about: "P(chi_nl) of per-instance nonlinear susceptibility" },
    Recipe { name: "dz-trend", mode: Mode::Qmc, about: "d/z' against Gamma at the largest size, all four sources" },
    Recipe { name: "dynamical-z", mode: Mode::Qmc, about: "z scan of the Binder ratio against beta / L^z" },
    Recipe { name: "device-binder", mode: Mode::DeviceSim, about: "Binder ratio and [<|m|>] against s*" },
    Recipe { name: "device-susceptibility", mode: Mode::DeviceSim, about: "field-sweep chi against s*, peaks and 1/L extrapolation" },
    Recipe { name: "device-nl-susceptibility", mode: Mode::DeviceSim, about: "field-sweep chi_nl against s*, peaks and 1/L extrapolation" },
    Recipe { name: "device-hist", mode: Mode::DeviceSim, about: "P(chi) over instances at each s* with tail fit" },
    Recipe { name: "device-nl-hist", mode: Mode::DeviceSim, about: "P(chi_nl) over instances at each s* with tail fit" },
    Recipe { name: "device-dz", mode: Mode::DeviceSim, about: "d/z' against s* at the largest size" },
    Recipe { name: "schedule-map", mode: Mode::DeviceSim, about: "beta(s*) and Gamma(s*) from the schedule" },
];

pub fn find(name: &str) -> Option<&'static Recipe> {
    RECIPES.iter().find(|r| r.name == name)
}

/// One device-simulation grid cell: zero-field moments plus the field sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviceCell {
    #[serde(flatten)]
    pub record: DeviceRecord,
    pub chi: f64,
    pub chi_nl: f64,
    pub saturated: bool,
    pub sweep_h: Vec<f64>,
    pub sweep_m: Vec<f64>,
}

pub enum Records {
    Qmc(Vec<MomentRecord>),
    Device(Vec<DeviceCell>),
}

pub struct RecipeOutput {
    pub csv: String,
    pub json: Value,
}

struct Table {
    w: csv::Writer<Vec<u8>>,
}

impl Table {
    fn new(header: &[&str]) -> Result<Self> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header).map_err(csv_err)?;
        Ok(Table { w })
    }

    fn row(&mut self, fields: &[String]) -> Result<()> {
        self.w.write_record(fields).map_err(csv_err)
    }

    fn finish(self) -> Result<String> {
        let bytes = self.w.into_inner().map_err(|e| Error::Validation(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Validation(format!("csv: {e}"))
}

macro_rules! cells {
    ($($x:expr),* $(,)?) => { vec![$($x.to_string()),*] };
}

pub struct Context<'a> {
    pub analysis: &'a AnalysisConfig,
    pub schedule: &'a Schedule,
    pub t_phys: f64,
    pub s_stars: &'a [f64],
}

impl Context<'_> {
    fn policy(&self, base: FitPolicy) -> FitPolicy {
        let a = self.analysis;
        FitPolicy {
            start_factor: a.start_factor.unwrap_or(base.start_factor),
            density_floor: a.density_floor.unwrap_or(base.density_floor),
            min_count: a.min_count.unwrap_or(base.min_count),
        }
    }
}

pub fn run(name: &str, records: &Records, ctx: &Context) -> Result<RecipeOutput> {
    match (name, records) {
        ("binder", Records::Qmc(r)) => binder(r),
        ("binder-collapse", Records::Qmc(r)) => binder_collapse(r, ctx),
        ("susceptibility", Records::Qmc(r)) => susceptibility(r, ctx),
        ("magnetization", Records::Qmc(r)) => magnetization(r, ctx),
        ("local-hist", Records::Qmc(r)) => qmc_histograms(r, ctx, Source::Local),
        ("local-nl-hist", Records::Qmc(r)) => qmc_histograms(r, ctx, Source::LocalNl),
        ("global-hist", Records::Qmc(r)) => qmc_histograms(r, ctx, Source::Global),
        ("global-nl-hist", Records::Qmc(r)) => qmc_histograms(r, ctx, Source::GlobalNl),
        ("dz-trend", Records::Qmc(r)) => dz_trend(r, ctx),
        ("dynamical-z", Records::Qmc(r)) => dynamical_z(r, ctx),
        ("device-binder", Records::Device(c)) => device_binder(c),
        ("device-susceptibility", Records::Device(c)) => device_peaks(c, ctx, false),
        ("device-nl-susceptibility", Records::Device(c)) => device_peaks(c, ctx, true),
        ("device-hist", Records::Device(c)) => device_histograms(c, ctx, false),
        ("device-nl-hist", Records::Device(c)) => device_histograms(c, ctx, true),
        ("device-dz", Records::Device(c)) => device_dz(c, ctx),
        ("schedule-map", _) => schedule_map(ctx),
        _ => match find(name) {
            Some(r) => Err(Error::Validation(format!("recipe `{name}` needs {:?} records", r.mode))),
            None => Err(Error::Validation(format!("unknown recipe `{name}`"))),
        },
    }
}

fn binder(records: &[MomentRecord]) -> Result<RecipeOutput> {
    let mut t = Table::new(&["L", "beta", "gamma", "n", "g", "g_err", "log_g", "log_g_err"])?;
    let mut curves: BTreeMap<(u64, usize), Vec<(f64, f64)>> = BTreeMap::new();
    for (key, group) in group_records(records) {
        let b = binder_ratio(&group, Resampling::Jackknife)?;
        let (lv, le) = b.log_scale.map(|e| (e.value, e.error)).unwrap_or((f64::INFINITY, f64::NAN));
        t.row(&cells![key.l, key.beta(), key.gamma(), group.len(), b.g.value, b.g.error, lv, le])?;
        curves.entry((key.beta().to_bits(), key.l)).or_default().push((key.gamma(), b.g.value));
    }
    Ok(RecipeOutput { csv: t.finish()?, json: json!({ "crossings": crossings(&curves) }) })
}

/// Crossings of consecutive sizes at every beta, on their shared Gamma values.
fn crossings(curves: &BTreeMap<(u64, usize), Vec<(f64, f64)>>) -> Vec<Value> {
    let mut out = Vec::new();
    let betas: Vec<u64> = curves.keys().map(|k| k.0).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
    for b in betas {
        let sizes: Vec<usize> = curves.keys().filter(|k| k.0 == b).map(|k| k.1).collect();
        for w in sizes.windows(2) {
            let (a, c) = (&curves[&(b, w[0])], &curves[&(b, w[1])]);
            let shared: Vec<(f64, f64, f64)> = a
                .iter()
                .filter_map(|&(x, ya)| c.iter().find(|p| p.0 == x).map(|&(_, yc)| (x, ya, yc)))
                .collect();
            let xs: Vec<f64> = shared.iter().map(|p| p.0).collect();
            let ya: Vec<f64> = shared.iter().map(|p| p.1).collect();
            let yc: Vec<f64> = shared.iter().map(|p| p.2).collect();
            out.push(json!({
                "beta": f64::from_bits(b),
                "L_small": w[0],
                "L_large": w[1],
                "gamma": curve_crossing(&xs, &ya, &yc),
            }));
        }
    }
    out
}

/// Collapse of `(L, Gamma, y)` at every beta with at least two sizes, and the
/// linear extrapolation of the fitted parameters to `T = 0`.
fn collapse_by_beta(
    points: &BTreeMap<u64, Vec<CurvePoint>>,
    form: ScalingForm,
    ctx: &Context,
) -> Result<(Vec<Value>, Value, Vec<(f64, f64, f64, f64, f64)>)> {
    let mut fits = Vec::new();
    let mut rows = Vec::new();
    for (&b, pts) in points {
        let beta = f64::from_bits(b);
        let sizes: std::collections::BTreeSet<usize> = pts.iter().map(|p| p.l).collect();
        let xs = pts.iter().map(|p| p.x);
        let (lo, hi) = (xs.clone().fold(f64::INFINITY, f64::min), xs.fold(f64::NEG_INFINITY, f64::max));
        if sizes.len() < 2 || !(hi > lo) {
            fits.push(json!({ "beta": beta, "error": "need two sizes and two control values" }));
            continue;
        }
        let [nu_lo, nu_hi] = ctx.analysis.nu_range;
        let mut bounds = SearchBox {
            lower: vec![lo, nu_lo],
            upper: vec![hi, nu_hi],
            start: vec![0.5 * (lo + hi), (1.0f64).clamp(nu_lo, nu_hi)],
        };
        if form != ScalingForm::Plain {
            bounds.lower.push(0.0);
            bounds.upper.push(4.0);
            bounds.start.push(1.0);
        }
        match optimize_collapse(pts, form, &bounds) {
            Ok(fit) => {
                rows.push((beta, fit.x_c, fit.x_c_error, fit.nu, fit.nu_error));
                fits.push(json!({ "beta": beta, "fit": fit }));
            }
            Err(e) => fits.push(json!({ "beta": beta, "error": e.to_string() })),
        }
    }
    let extrapolation = if rows.len() >= 2 {
        let xc: Vec<(f64, f64, f64)> = rows.iter().map(|r| (1.0 / r.0, r.1, r.2)).collect();
        let nu: Vec<(f64, f64, f64)> = rows.iter().map(|r| (1.0 / r.0, r.3, r.4)).collect();
        json!({
            "x_c": linear_extrapolate(&xc).map_err(|e| e.to_string()).map(|f| json!(f)).unwrap_or_else(|e| json!(e)),
            "nu": linear_extrapolate(&nu).map_err(|e| e.to_string()).map(|f| json!(f)).unwrap_or_else(|e| json!(e)),
        })
    } else {
        Value::Null
    };
    Ok((fits, extrapolation, rows))
}

fn binder_collapse(records: &[MomentRecord], ctx: &Context) -> Result<RecipeOutput> {
    let mut points: BTreeMap<u64, Vec<CurvePoint>> = BTreeMap::new();
    for (key, group) in group_records(records) {
        let b = binder_ratio(&group, Resampling::Jackknife)?;
        points.entry(key.beta().to_bits()).or_default().push(CurvePoint {
            l: key.l,
            x: key.gamma(),
            y: b.g.value,
            err: b.g.error,
        });
    }
    let (fits, extrapolation, rows) = collapse_by_beta(&points, ScalingForm::Plain, ctx)?;
    let mut t = Table::new(&["beta", "T", "gamma_c", "gamma_c_err", "nu", "nu_err"])?;
    for (beta, xc, xe, nu, ne) in rows {
        t.row(&cells![beta, 1.0 / beta, xc, xe, nu, ne])?;
    }
    Ok(RecipeOutput { csv: t.finish()?, json: json!({ "fits": fits, "zero_temperature": extrapolation }) })
}

fn point_table(
    records: &[MomentRecord],
    ctx: &Context,
    form: ScalingForm,
    value: impl Fn(&[MomentRecord], usize, f64) -> Result<(f64, f64)>,
) -> Result<RecipeOutput> {
    let mut t = Table::new(&["L", "beta", "gamma", "n", "value", "error"])?;
    let mut points: BTreeMap<u64, Vec<CurvePoint>> = BTreeMap::new();
    for (key, group) in group_records(records) {
        let (v, e) = value(&group, group[0].n_sites(), key.beta())?;
        t.row(&cells![key.l, key.beta(), key.gamma(), group.len(), v, e])?;
        points.entry(key.beta().to_bits()).or_default().push(CurvePoint { l: key.l, x: key.gamma(), y: v, err: e });
    }
    let (fits, extrapolation, _) = collapse_by_beta(&points, form, ctx)?;
    Ok(RecipeOutput { csv: t.finish()?, json: json!({ "collapse": fits, "zero_temperature": extrapolation }) })
}

fn susceptibility(records: &[MomentRecord], ctx: &Context) -> Result<RecipeOutput> {
    point_table(records, ctx, ScalingForm::Susceptibility, |g, n, beta| {
        let e = global_susceptibility(g, beta, n, Resampling::Jackknife)?;
        Ok((e.value, e.error))
    })
}

fn magnetization(records: &[MomentRecord], ctx: &Context) -> Result<RecipeOutput> {
    point_table(records, ctx, ScalingForm::Magnetization, |g, _, _| {
        let e = ensemble_mean(g, |r| r.m_abs, Resampling::Jackknife)?;
        Ok((e.value, e.error))
    })
}

#[derive(Clone, Copy, PartialEq)]
enum Source {
    Local,
    LocalNl,
    Global,
    GlobalNl,
}

impl Source {
    fn name(self) -> &'static str {
        match self {
            Source::Local => "local",
            Source::LocalNl => "local-nl",
            Source::Global => "global",
            Source::GlobalNl => "global-nl",
        }
    }

    fn samples(self, group: &[MomentRecord]) -> Vec<f64> {
        match self {
            Source::Local => group.iter().flat_map(|r| local_susceptibilities(r).into_iter().map(|p| p.0)).collect(),
            Source::LocalNl => group.iter().flat_map(|r| local_susceptibilities(r).into_iter().map(|p| p.1)).collect(),
            Source::Global => group.iter().map(|r| global_nl_susceptibility(r).0).collect(),
            Source::GlobalNl => group.iter().map(|r| global_nl_susceptibility(r).1).collect(),
        }
    }

    fn nonlinear(self) -> bool {
        matches!(self, Source::LocalNl | Source::GlobalNl)
    }
}

/// Histogram and tail fit of one sample set; the histogram is returned even
/// when the fit fails.
fn histogram_fit(
    samples: &[f64],
    bins: usize,
    policy: FitPolicy,
    nonlinear_source: bool,
    control: f64,
) -> (Option<griffiths_core::analysis::Histogram>, std::result::Result<ExponentEstimate, String>) {
    let hist = match build_histogram(samples, bins, RangePolicy::Auto) {
        Ok(h) => h,
        Err(e) => return (None, Err(e.to_string())),
    };
    let est = fit_tail_slope(&hist, policy).map_err(|e| e.to_string()).map(|fit| {
        if nonlinear_source {
            dz_from_nonlinear_slope(&fit, control)
        } else {
            dz_from_linear_slope(&fit, control)
        }
    });
    (Some(hist), est)
}

fn histogram_rows(t: &mut Table, prefix: &[String], hist: &griffiths_core::analysis::Histogram) -> Result<()> {
    for (k, c) in hist.centers().iter().enumerate() {
        let mut row = prefix.to_vec();
        row.extend(cells![hist.edges[k], hist.edges[k + 1], c, hist.density[k], hist.counts[k]]);
        t.row(&row)?;
    }
    Ok(())
}

fn qmc_histograms(records: &[MomentRecord], ctx: &Context, source: Source) -> Result<RecipeOutput> {
    let mut t = Table::new(&["L", "beta", "gamma", "bin_lo", "bin_hi", "center", "density", "count"])?;
    let mut fits = Vec::new();
    for (key, group) in group_records(records) {
        let (hist, est) =
            histogram_fit(&source.samples(&group), ctx.analysis.bins, ctx.policy(FitPolicy::qmc()), source.nonlinear(), key.gamma());
        if let Some(h) = &hist {
            histogram_rows(&mut t, &cells![key.l, key.beta(), key.gamma()], h)?;
        }
        fits.push(json!({
            "L": key.l, "beta": key.beta(), "gamma": key.gamma(),
            "dropped_non_positive": hist.as_ref().map(|h| h.non_positive),
            "estimate": est.as_ref().ok(), "error": est.as_ref().err(),
        }));
    }
    Ok(RecipeOutput { csv: t.finish()?, json: json!({ "source": source.name(), "fits": fits }) })
}

fn dz_trend(records: &[MomentRecord], ctx: &Context) -> Result<RecipeOutput> {
    let groups = group_records(records);
    let mut t = Table::new(&["L", "beta", "gamma", "source", "d_over_zprime", "error"])?;
    let mut failures = Vec::new();
    let l_max = groups.keys().map(|k| k.l).max().unwrap_or(0);
    for (key, group) in groups.iter().filter(|(k, _)| k.l == l_max) {
        for source in [Source::Local, Source::LocalNl, Source::Global, Source::GlobalNl] {
            let (_, est) = histogram_fit(
                &source.samples(group),
                ctx.analysis.bins,
                ctx.policy(FitPolicy::qmc()),
                source.nonlinear(),
                key.gamma(),
            );
            match est {
                Ok(e) => t.row(&cells![key.l, key.beta(), key.gamma(), source.name(), e.d_over_zprime, e.error])?,
                Err(e) => failures.push(json!({ "beta": key.beta(), "gamma": key.gamma(), "source": source.name(), "error": e })),
            }
        }
    }
    Ok(RecipeOutput { csv: t.finish()?, json: json!({ "L": l_max, "failed_fits": failures }) })
}

fn dynamical_z(records: &[MomentRecord], ctx: &Context) -> Result<RecipeOutput> {
    let groups = group_records(records);
    let gamma_c = match ctx.analysis.critical_gamma {
        Some(g) => g,
        None => {
            let mut curves: BTreeMap<(u64, usize), Vec<(f64, f64)>> = BTreeMap::new();
            for (key, group) in &groups {
                let g = binder_ratio(group, Resampling::Jackknife)?.g.value;
                curves.entry((key.beta().to_bits(), key.l)).or_default().push((key.gamma(), g));
            }
            // crossing of the two largest sizes at the largest beta
            let found: Vec<Value> = crossings(&curves);
            found
                .iter()
                .rev()
                .find_map(|c| c["gamma"].as_f64())
                .ok_or_else(|| Error::Validation("no Binder crossing found; set analysis.critical_gamma".into()))?
        }
    };
    let gammas: std::collections::BTreeSet<u64> = groups.keys().map(|k| k.gamma().to_bits()).collect();
    let nearest = gammas
        .iter()
        .map(|b| f64::from_bits(*b))
        .min_by(|a, b| (a - gamma_c).abs().total_cmp(&(b - gamma_c).abs()))
        .ok_or_else(|| Error::Validation("no records".into()))?;
    let mut pts = Vec::new();
    for (key, group) in groups.iter().filter(|(k, _)| k.gamma() == nearest) {
        let g = binder_ratio(group, Resampling::Jackknife)?.g.value;
        if g > 0.0 {
            pts.push((key.beta(), key.l, g));
        }
    }
    let a = ctx.analysis;
    let n = ((a.z_max - a.z_min) / a.z_step).round() as usize;
    let grid: Vec<f64> = (0..=n).map(|k| a.z_min + a.z_step * k as f64).collect();
    let scan = scan_dynamical_z(&pts, &grid)?;
    let mut t = Table::new(&["z", "mse"])?;
    for (z, m) in &scan.mse {
        t.row(&cells![z, m])?;
    }
    Ok(RecipeOutput {
        csv: t.finish()?,
        json: json!({ "critical_gamma": gamma_c, "gamma_used": nearest, "points": pts.len(), "scan": scan }),
    })
}

/// Device cells grouped by `(L, s*)`.
fn device_groups(cells: &[DeviceCell]) -> BTreeMap<(usize, u64), Vec<&DeviceCell>> {
    let mut g: BTreeMap<(usize, u64), Vec<&DeviceCell>> = BTreeMap::new();
    for c in cells {
        g.entry((c.record.record.l, c.record.s_star.to_bits())).or_default().push(c);
    }
    g
}

fn device_binder(cells: &[DeviceCell]) -> Result<RecipeOutput> {
    let mut t = Table::new(&["L", "s_star", "beta", "gamma", "n", "g", "g_err", "m_abs", "m_abs_err"])?;
    for ((l, s), group) in device_groups(cells) {
        let recs: Vec<MomentRecord> = group.iter().map(|c| c.record.record.clone()).collect();
        let b = binder_ratio(&recs, Resampling::Jackknife)?;
        let m = ensemble_mean(&recs, |r| r.m_abs, Resampling::Jackknife)?;
        t.row(&cells![l, f64::from_bits(s), recs[0].beta, recs[0].gamma, recs.len(), b.g.value, b.g.error, m.value, m.error])?;
    }
    Ok(RecipeOutput { csv: t.finish()?, json: json!({}) })
}

fn device_peaks(cells: &[DeviceCell], ctx: &Context, nl: bool) -> Result<RecipeOutput> {
    let value = |c: &DeviceCell| if nl { c.chi_nl } else { c.chi };
    let mut t = Table::new(&["L", "s_star", "n", "value", "error", "saturated"])?;
    for ((l, s), group) in device_groups(cells) {
        let x: Vec<f64> = group.iter().map(|c| value(c)).collect();
        let (v, e) = griffiths_core::observables::jackknife(&x, griffiths_core::stats::mean);
        let sat = group.iter().filter(|c| c.saturated).count();
        t.row(&cells![l, f64::from_bits(s), group.len(), v, e, sat])?;
    }
    // per size: instances observed at every pause point
    let mut by_size: BTreeMap<usize, BTreeMap<String, BTreeMap<u64, f64>>> = BTreeMap::new();
    for c in cells {
        by_size
            .entry(c.record.record.l)
            .or_default()
            .entry(c.record.record.instance.clone())
            .or_default()
            .insert(c.record.s_star.to_bits(), value(c));
    }
    let mut grid: Vec<f64> = ctx.s_stars.to_vec();
    grid.sort_by(f64::total_cmp);
    let spacing = grid.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    let floor = if spacing.is_finite() { 0.1 * spacing } else { 0.0 };
    let mut peaks = Vec::new();
    let mut points = Vec::new();
    for (l, instances) in &by_size {
        let curves: Vec<Vec<f64>> = instances
            .values()
            .filter_map(|m| grid.iter().map(|s| m.get(&s.to_bits()).copied()).collect::<Option<Vec<_>>>())
            .collect();
        match peak_with_jackknife(&grid, &curves) {
            Some((p, e)) => {
                peaks.push(json!({ "L": l, "peak": p, "error": e, "instances": curves.len() }));
                points.push((1.0 / *l as f64, p, e.max(floor)));
            }
            None => peaks.push(json!({ "L": l, "error": "peak on the grid boundary or no complete curves" })),
        }
    }
    let extrapolation = if points.len() >= 2 {
        linear_extrapolate(&points).map(|f| json!(f)).unwrap_or_else(|e| json!(e.to_string()))
    } else {
        Value::Null
    };
    Ok(RecipeOutput {
        csv: t.finish()?,
        json: json!({ "observable": if nl { "chi_nl" } else { "chi" }, "peaks": peaks, "extrapolation": extrapolation }),
    })
}

fn device_hist_estimates(
    cells: &[DeviceCell],
    ctx: &Context,
    nl: bool,
    mut table: Option<&mut Table>,
) -> Result<Vec<(usize, f64, std::result::Result<ExponentEstimate, String>)>> {
    let mut out = Vec::new();
    for ((l, s), group) in device_groups(cells) {
        let s = f64::from_bits(s);
        let x: Vec<f64> = group.iter().map(|c| if nl { c.chi_nl } else { c.chi }).collect();
        let (hist, est) = histogram_fit(&x, ctx.analysis.bins, ctx.policy(FitPolicy::device()), nl, s);
        if let (Some(t), Some(h)) = (table.as_deref_mut(), &hist) {
            histogram_rows(t, &cells![l, s], h)?;
        }
        out.push((l, s, est));
    }
    Ok(out)
}

fn device_histograms(cells: &[DeviceCell], ctx: &Context, nl: bool) -> Result<RecipeOutput> {
    let mut t = Table::new(&["L", "s_star", "bin_lo", "bin_hi", "center", "density", "count"])?;
    let fits: Vec<Value> = device_hist_estimates(cells, ctx, nl, Some(&mut t))?
        .into_iter()
        .map(|(l, s, est)| json!({ "L": l, "s_star": s, "estimate": est.as_ref().ok(), "error": est.as_ref().err() }))
        .collect();
    Ok(RecipeOutput { csv: t.finish()?, json: json!({ "observable": if nl { "chi_nl" } else { "chi" }, "fits": fits }) })
}

fn device_dz(cells: &[DeviceCell], ctx: &Context) -> Result<RecipeOutput> {
    let l_max = cells.iter().map(|c| c.record.record.l).max().unwrap_or(0);
    let largest: Vec<DeviceCell> = cells.iter().filter(|c| c.record.record.l == l_max).cloned().collect();
    let mut t = Table::new(&["L", "s_star", "source", "d_over_zprime", "error"])?;
    let mut failures = Vec::new();
    for nl in [false, true] {
        let name = if nl { "nonlinear" } else { "linear" };
        for (l, s, est) in device_hist_estimates(&largest, ctx, nl, None)? {
            match est {
                Ok(e) => t.row(&cells![l, s, name, e.d_over_zprime, e.error])?,
                Err(e) => failures.push(json!({ "s_star": s, "source": name, "error": e })),
            }
        }
    }
    Ok(RecipeOutput { csv: t.finish()?, json: json!({ "L": l_max, "failed_fits": failures }) })
}

fn schedule_map(ctx: &Context) -> Result<RecipeOutput> {
    let mut s: Vec<f64> = (1..100).map(|k| k as f64 / 100.0).collect();
    s.extend_from_slice(ctx.s_stars);
    s.sort_by(f64::total_cmp);
    s.dedup();
    let mut t = Table::new(&["s", "A_GHz", "B_GHz", "beta", "gamma"])?;
    for &x in &s {
        let (a, b) = ctx.schedule.at(x)?;
        match map_s_to_beta_gamma(ctx.schedule, x, ctx.t_phys) {
            Ok((beta, gamma)) => t.row(&cells![x, a, b, beta, gamma])?,
            Err(_) => continue,
        }
    }
    let points: Vec<Value> = ctx
        .s_stars
        .iter()
        .filter_map(|&x| map_s_to_beta_gamma(ctx.schedule, x, ctx.t_phys).ok().map(|(b, g)| json!({ "s_star": x, "beta": b, "gamma": g })))
        .collect();
    Ok(RecipeOutput { csv: t.finish()?, json: json!({ "t_phys": ctx.t_phys, "grid": points }) })
}

