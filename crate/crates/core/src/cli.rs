//! Command-line front end: argument schema, dispatch and artifact writing.
//!
//! Every artifact is named `<command>[-tag]-<suffix>.<ext>`, where the
//! suffix is the first 8 hex digits of a hash over the effective config and
//! the command arguments.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use sha2::{Digest, Sha256};

use crate::collection::{coincidence_curve, conditional_geometry, fwhm, heralding_ratio, stability_range, RateCurve};
use crate::config::{load_config, LoadOptions, SourceConfig, SCENARIOS};
use crate::error::{Error, Result};
use crate::fourier::IntensityMap;
use crate::perfectring::{analytic_perfect_ring_radius, perfect_ring_width, ring_metrology, simulate_perfect_ring};
use crate::phasematch::{collinear_degenerate_temperature, ring_profile_at_collimator, PumpConfig, RingProfile};
use crate::polarization::{
    bell_state, chsh_counts, chsh_exact, chsh_from_counts, fidelity, fit_fringe, fringe_scan, linear_inversion,
    read_counts_csv, sagnac_state_with, tomography_counts, write_counts_csv, AnalyzerSetting, TwoQubitState,
};
use crate::timetag::{
    count_coincidences, delay_scan, read_timetags, synthesize_pair_streams, write_delay_scan, TimeTagStream,
};

#[derive(Debug, Parser)]
#[command(name = "ringsource", version, about = "Perfect-ring SPDC source simulator")]
pub struct Cli {
    /// Source configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Skip the QPM offset calibration.
    #[arg(long, global = true)]
    pub no_calibrate: bool,
    /// Overrides the FFT grid size.
    #[arg(long, global = true)]
    pub grid: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Subcommand)]
pub enum Command {
    /// Direct and perfect ring radius/width versus crystal temperature.
    SweepTemperature {
        /// Default T0 − 7 °C.
        #[arg(long)]
        t_lo: Option<f64>,
        /// Default T0.
        #[arg(long)]
        t_hi: Option<f64>,
        #[arg(long, default_value_t = 0.5)]
        step: f64,
        /// Measure the perfect ring with the diffraction engine.
        #[arg(long)]
        engine: bool,
    },
    /// Collinear degenerate temperature versus pump wavelength.
    SweepWavelength {
        #[arg(long, default_value_t = 404.90)]
        lo_nm: f64,
        #[arg(long, default_value_t = 405.20)]
        hi_nm: f64,
        #[arg(long, default_value_t = 0.01)]
        step_nm: f64,
    },
    /// Image of the SPDC ring at the collimating lens.
    RingImage {
        /// Default: crystal temperature.
        #[arg(long)]
        temperature: Option<f64>,
    },
    /// Image of the perfect ring in the observation plane.
    PerfectRingImage {
        #[arg(long)]
        temperature: Option<f64>,
    },
    /// Coincidence-versus-temperature curves and their FWHM.
    Bandwidth,
    /// Peak-centered stability ranges of the coincidence curves.
    Stability {
        /// Allowed drop below the peak.
        #[arg(long, default_value_t = 0.1)]
        fraction: f64,
    },
    /// Polarization-correlation fringes in the H and D bases.
    Fringes,
    /// CHSH counts and S with its Monte-Carlo uncertainty.
    Chsh,
    /// Synthetic two-qubit tomography counts.
    TomographySimulate,
    /// Reconstruct a state from a counts CSV.
    TomographyAnalyze {
        #[arg(long)]
        input: PathBuf,
    },
    /// Coincidences in a time-tag file (synthesized when no input is given).
    TimetagCount {
        #[arg(long)]
        input: Option<PathBuf>,
        /// Half-range of the delay scan, ns.
        #[arg(long, default_value_t = 10.0)]
        scan_ns: f64,
        #[arg(long, default_value_t = 0.2)]
        scan_step_ns: f64,
    },
    /// Synthetic two-channel time-tag file.
    TimetagSynth,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::SweepTemperature { .. } => "sweep-temperature",
            Command::SweepWavelength { .. } => "sweep-wavelength",
            Command::RingImage { .. } => "ring-image",
            Command::PerfectRingImage { .. } => "perfect-ring-image",
            Command::Bandwidth => "bandwidth",
            Command::Stability { .. } => "stability",
            Command::Fringes => "fringes",
            Command::Chsh => "chsh",
            Command::TomographySimulate => "tomography-simulate",
            Command::TomographyAnalyze { .. } => "tomography-analyze",
            Command::TimetagCount { .. } => "timetag-count",
            Command::TimetagSynth => "timetag-synth",
        }
    }
}

/// Loads the config named on the command line and applies the overrides.
pub fn effective_config(cli: &Cli) -> Result<SourceConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::config("--config", "a config file is required"))?;
    let mut cfg = load_config(
        path,
        LoadOptions {
            calibrate: !cli.no_calibrate,
        },
    )?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(n) = cli.grid {
        cfg.grid.n = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Parses `args`, runs the command and reports; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let outcome = effective_config(&cli).and_then(|cfg| run(&cli.command, &cfg, &cli.out));
    match outcome {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

struct Ctx<'a> {
    cfg: &'a SourceConfig,
    out: &'a Path,
    name: &'static str,
    suffix: String,
    header: Vec<String>,
}

impl Ctx<'_> {
    fn path(&self, tag: Option<&str>, ext: &str) -> PathBuf {
        let stem = match tag {
            Some(t) => format!("{}-{t}-{}", self.name, self.suffix),
            None => format!("{}-{}", self.name, self.suffix),
        };
        self.out.join(format!("{stem}.{ext}"))
    }

    fn write_table(&self, tag: Option<&str>, columns: &str, rows: &[String]) -> Result<PathBuf> {
        let path = self.path(tag, "csv");
        let mut w = std::io::BufWriter::new(std::fs::File::create(&path)?);
        for line in &self.header {
            writeln!(w, "# {line}")?;
        }
        writeln!(w, "{columns}")?;
        for r in rows {
            writeln!(w, "{r}")?;
        }
        w.flush()?;
        Ok(path)
    }

    fn echo_config(&self) -> Result<()> {
        let doc = serde_json::json!({
            "tool": format!("ringsource {}", env!("CARGO_PKG_VERSION")),
            "command": self.name,
            "config_sha256": self.cfg.hash(),
            "config": self.cfg,
        });
        let text = serde_json::to_string_pretty(&doc)?;
        std::fs::write(self.path(None, "config.json"), text + "\n")?;
        Ok(())
    }
}

/// Runs one command against a loaded config, writing artifacts into `out`.
/// Returns the one-line summary.
pub fn run(command: &Command, cfg: &SourceConfig, out: &Path) -> Result<String> {
    std::fs::create_dir_all(out)?;
    let name = command.name();
    let mut h = Sha256::new();
    h.update(cfg.hash().as_bytes());
    h.update(format!("{command:?}").as_bytes());
    let suffix: String = h.finalize().iter().take(4).map(|b| format!("{b:02x}")).collect();
    let mut header = cfg.header(name);
    header.push(format!("args {command:?}"));
    let ctx = Ctx {
        cfg,
        out,
        name,
        suffix,
        header,
    };
    ctx.echo_config()?;
    match command {
        Command::SweepTemperature {
            t_lo,
            t_hi,
            step,
            engine,
        } => sweep_temperature(&ctx, *t_lo, *t_hi, *step, *engine),
        Command::SweepWavelength { lo_nm, hi_nm, step_nm } => sweep_wavelength(&ctx, *lo_nm, *hi_nm, *step_nm),
        Command::RingImage { temperature } => ring_image(&ctx, *temperature),
        Command::PerfectRingImage { temperature } => perfect_ring_image(&ctx, *temperature),
        Command::Bandwidth => bandwidth(&ctx),
        Command::Stability { fraction } => stability(&ctx, *fraction),
        Command::Fringes => fringes(&ctx),
        Command::Chsh => chsh(&ctx),
        Command::TomographySimulate => tomography_simulate(&ctx),
        Command::TomographyAnalyze { input } => tomography_analyze(&ctx, input),
        Command::TimetagCount {
            input,
            scan_ns,
            scan_step_ns,
        } => timetag_count(&ctx, input.as_deref(), *scan_ns, *scan_step_ns),
        Command::TimetagSynth => timetag_synth(&ctx),
    }
}

fn steps(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    if !(hi >= lo) || !(step > 0.0) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::invalid(format!("empty range [{lo}, {hi}] step {step}")));
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    Ok((0..n).map(|k| lo + k as f64 * step).collect())
}

fn direct_ring(cfg: &SourceConfig, t: f64) -> Result<RingProfile> {
    ring_profile_at_collimator(&cfg.crystal, &cfg.pump, t, cfg.layout.f1, cfg.collection.filter_fwhm_nm)
}

fn engine_ring(cfg: &SourceConfig, ring: &RingProfile) -> Result<RingProfile> {
    let map = simulate_perfect_ring(&cfg.layout, ring, cfg.pump.degenerate_m(), cfg.grid, cfg.ensemble)?;
    ring_metrology(&map)
}

fn sweep_temperature(ctx: &Ctx, t_lo: Option<f64>, t_hi: Option<f64>, step: f64, engine: bool) -> Result<String> {
    let cfg = ctx.cfg;
    let t0 = collinear_degenerate_temperature(&cfg.crystal, &cfg.pump)?;
    let temps = steps(t_lo.unwrap_or(t0 - 7.0), t_hi.unwrap_or(t0), step)?;
    let analytic = analytic_perfect_ring_radius(&cfg.layout);
    let rings: Vec<RingProfile> = crate::par::map_slice(&temps, |&t| direct_ring(cfg, t))
        .into_iter()
        .collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(temps.len());
    let mut perfect = Vec::with_capacity(temps.len());
    for (&t, ring) in temps.iter().zip(&rings) {
        let (pr, pw) = if engine {
            let m = engine_ring(cfg, ring)?;
            (m.radius_m, m.width_fwhm_m)
        } else {
            let order = cfg.vortex.order_per_degree * (t0 - t).max(0.0);
            (analytic, perfect_ring_width(&cfg.width_model, order)?)
        };
        perfect.push((pr, pw));
        rows.push(format!(
            "{t:.4},{:.9e},{:.9e},{pr:.9e},{pw:.9e}",
            ring.radius_m, ring.width_fwhm_m
        ));
    }
    let path = ctx.write_table(
        None,
        "T_C,ring_radius_m,ring_width_m,perfect_radius_m,perfect_width_m",
        &rows,
    )?;
    let (first, last) = (&rings[0], &rings[rings.len() - 1]);
    let (p_first, p_last) = (perfect[0], perfect[perfect.len() - 1]);
    Ok(format!(
        "sweep-temperature: T0 {t0:.3} C; ring radius {:.3} -> {:.3} mm; perfect radius {:.3} -> {:.3} mm, width {:.0} -> {:.0} um; {}",
        first.radius_m * 1e3,
        last.radius_m * 1e3,
        p_first.0 * 1e3,
        p_last.0 * 1e3,
        p_first.1 * 1e6,
        p_last.1 * 1e6,
        path.display()
    ))
}

fn sweep_wavelength(ctx: &Ctx, lo: f64, hi: f64, step: f64) -> Result<String> {
    let cfg = ctx.cfg;
    let lams = steps(lo, hi, step)?;
    let t0s: Vec<f64> = crate::par::map_slice(&lams, |&l| {
        let pump = PumpConfig {
            wavelength_nm: l,
            ..cfg.pump
        };
        collinear_degenerate_temperature(&cfg.crystal, &pump)
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let rows: Vec<String> = lams.iter().zip(&t0s).map(|(l, t)| format!("{l:.4},{t:.6}")).collect();
    let path = ctx.write_table(None, "lambda_p_nm,T0_C", &rows)?;
    let n = lams.len();
    let slope = if n > 1 {
        (t0s[n - 1] - t0s[0]) / (lams[n - 1] - lams[0])
    } else {
        0.0
    };
    Ok(format!(
        "sweep-wavelength: T0({:.2} nm) {:.3} C, T0({:.2} nm) {:.3} C, slope {slope:.2} C/nm; {}",
        lams[0],
        t0s[0],
        lams[n - 1],
        t0s[n - 1],
        path.display()
    ))
}

fn write_pgm(ctx: &Ctx, map: &IntensityMap) -> Result<PathBuf> {
    let path = ctx.path(None, "pgm");
    map.write_pgm(&path, &ctx.header)?;
    Ok(path)
}

fn ring_image(ctx: &Ctx, temperature: Option<f64>) -> Result<String> {
    let cfg = ctx.cfg;
    let t = temperature.unwrap_or(cfg.crystal.temperature_c);
    let ring = direct_ring(cfg, t)?;
    let n = cfg.grid.n;
    let pitch = cfg.grid.pitch();
    let rows: Vec<usize> = (0..n).collect();
    let data: Vec<f64> = crate::par::map_slice(&rows, |&j| {
        let y = (j as f64 - (n / 2) as f64) * pitch;
        (0..n)
            .map(|i| ring.intensity_at(((i as f64 - (n / 2) as f64) * pitch).hypot(y)))
            .collect::<Vec<f64>>()
    })
    .concat();
    let path = write_pgm(ctx, &IntensityMap { n, pitch, data })?;
    Ok(format!(
        "ring-image: T {t:.2} C; radius {:.3} mm, width {:.0} um; {}",
        ring.radius_m * 1e3,
        ring.width_fwhm_m * 1e6,
        path.display()
    ))
}

fn perfect_ring_image(ctx: &Ctx, temperature: Option<f64>) -> Result<String> {
    let cfg = ctx.cfg;
    let t = temperature.unwrap_or(cfg.crystal.temperature_c);
    let ring = direct_ring(cfg, t)?;
    let map = simulate_perfect_ring(&cfg.layout, &ring, cfg.pump.degenerate_m(), cfg.grid, cfg.ensemble)?;
    let m = ring_metrology(&map)?;
    let path = write_pgm(ctx, &map)?;
    Ok(format!(
        "perfect-ring-image: T {t:.2} C; radius {:.3} mm (analytic {:.3} mm), width {:.0} um; {}",
        m.radius_m * 1e3,
        analytic_perfect_ring_radius(&cfg.layout) * 1e3,
        m.width_fwhm_m * 1e6,
        path.display()
    ))
}

fn scenario_curves(cfg: &SourceConfig) -> Result<Vec<RateCurve>> {
    let setup = cfg.collection_setup();
    let s = cfg.collection.sweep;
    SCENARIOS
        .iter()
        .map(|&(name, plane)| coincidence_curve(&setup, plane, &cfg.collection.optics(name)?, s.t_lo, s.t_hi, s.step))
        .collect()
}

fn bandwidth(ctx: &Ctx) -> Result<String> {
    let curves = scenario_curves(ctx.cfg)?;
    let rows: Vec<String> = (0..curves[0].samples.len())
        .map(|k| {
            let mut row = format!("{:.4}", curves[0].samples[k].0);
            for c in &curves {
                let _ = write!(row, ",{:.9e}", c.samples[k].1);
            }
            row
        })
        .collect();
    let path = ctx.write_table(None, "T_C,direct_smf,perfect_smf,perfect_mmf", &rows)?;
    let widths: Vec<f64> = curves.iter().map(fwhm).collect::<Result<_>>()?;
    Ok(format!(
        "bandwidth: FWHM direct-smf {:.3} C, perfect-smf {:.3} C, perfect-mmf {:.3} C; enhancement {:.2}x, {:.2}x; {}",
        widths[0],
        widths[1],
        widths[2],
        widths[1] / widths[0],
        widths[2] / widths[0],
        path.display()
    ))
}

fn stability(ctx: &Ctx, fraction: f64) -> Result<String> {
    let cfg = ctx.cfg;
    let setup = cfg.collection_setup();
    let curves = scenario_curves(cfg)?;
    let mut rows = Vec::new();
    let mut ranges = Vec::new();
    for (&(name, plane), c) in SCENARIOS.iter().zip(&curves) {
        let optics = cfg.collection.optics(name)?;
        let tp = c.peak_temperature();
        let range = stability_range(c, fraction)?;
        let herald = heralding_ratio(&optics, conditional_geometry(&setup, plane, &optics, tp)?);
        rows.push(format!("{name},{tp:.4},{:.6},{range:.6},{herald:.6}", fwhm(c)?));
        ranges.push(range);
    }
    let path = ctx.write_table(None, "scenario,peak_T_C,fwhm_C,stability_pm_C,heralding", &rows)?;
    Ok(format!(
        "stability ({:.0}% drop): direct-smf +/-{:.3} C, perfect-smf +/-{:.3} C, perfect-mmf +/-{:.3} C; {}",
        fraction * 100.0,
        ranges[0],
        ranges[1],
        ranges[2],
        path.display()
    ))
}

fn source_state(cfg: &SourceConfig) -> Result<TwoQubitState> {
    sagnac_state_with(cfg.noise.phase_rad, cfg.noise.werner_p, cfg.noise.model)
}

fn fringes(ctx: &Ctx) -> Result<String> {
    let cfg = ctx.cfg;
    let state = source_state(cfg)?;
    let exposure = cfg.exposure(cfg.measurement.fringe_dwell_s);
    let angles = steps(0.0, 360.0, cfg.measurement.fringe_step_deg)?;
    let mut vis = Vec::new();
    let mut paths = Vec::new();
    for (k, (tag, fixed)) in [("H", AnalyzerSetting::H), ("D", AnalyzerSetting::D)]
        .into_iter()
        .enumerate()
    {
        let fringe = fringe_scan(&state, fixed, &angles, &exposure, Some(cfg.seed.wrapping_add(k as u64)))?;
        let path = ctx.path(Some(tag), "csv");
        fringe.write_csv(&path, &ctx.header)?;
        vis.push(fit_fringe(&fringe)?.visibility);
        paths.push(path.display().to_string());
    }
    Ok(format!(
        "fringes: V(H) {:.4}, V(D) {:.4}; {}",
        vis[0],
        vis[1],
        paths.join(", ")
    ))
}

fn chsh(ctx: &Ctx) -> Result<String> {
    let cfg = ctx.cfg;
    let state = source_state(cfg)?;
    let settings = cfg.measurement.chsh;
    let records = chsh_counts(
        &state,
        &settings,
        &cfg.exposure(cfg.measurement.chsh_dwell_s),
        Some(cfg.seed),
    )?;
    let path = ctx.path(None, "csv");
    write_counts_csv(&records, &path, &ctx.header)?;
    let est = chsh_from_counts(&records, &settings, cfg.measurement.resamples, cfg.seed.wrapping_add(1))?;
    Ok(format!(
        "chsh: S {:.3} +/- {:.3} ({:.1} sigma), exact {:.4}; {}",
        est.s,
        est.sigma,
        est.significance(),
        chsh_exact(&state, &settings),
        path.display()
    ))
}

fn tomography_simulate(ctx: &Ctx) -> Result<String> {
    let cfg = ctx.cfg;
    let state = source_state(cfg)?;
    let records = tomography_counts(
        &state,
        &cfg.exposure(cfg.measurement.tomography_dwell_s),
        Some(cfg.seed),
    )?;
    let path = ctx.path(None, "csv");
    write_counts_csv(&records, &path, &ctx.header)?;
    let total: u64 = records.iter().map(|r| r.counts).sum();
    let target = bell_state(cfg.noise.phase_rad);
    Ok(format!(
        "tomography-simulate: {} settings, {total} counts, true fidelity {:.4}; {}",
        records.len(),
        fidelity(&state, &target)?,
        path.display()
    ))
}

fn tomography_analyze(ctx: &Ctx, input: &Path) -> Result<String> {
    let cfg = ctx.cfg;
    let records = read_counts_csv(input)?;
    let rho = linear_inversion(&records)?;
    let path = ctx.path(None, "csv");
    rho.write_csv(&path, &ctx.header)?;
    let f = fidelity(&rho, &bell_state(cfg.noise.phase_rad))?;
    let s = chsh_exact(&rho, &cfg.measurement.chsh);
    let angles = steps(0.0, 360.0, cfg.measurement.fringe_step_deg)?;
    let fringe = fringe_scan(&rho, AnalyzerSetting::D, &angles, &cfg.exposure(1.0), None)?;
    let v = fit_fringe(&fringe)?.visibility;
    Ok(format!(
        "tomography-analyze: F {f:.4}, S {s:.3}, V {v:.4}, purity {:.4}; {}",
        rho.purity(),
        path.display()
    ))
}

fn synth(cfg: &SourceConfig) -> Result<(TimeTagStream, TimeTagStream)> {
    synthesize_pair_streams(&cfg.timetag.pair_spec(), cfg.seed)
}

fn timetag_synth(ctx: &Ctx) -> Result<String> {
    let (a, b) = synth(ctx.cfg)?;
    let mut merged: Vec<(i64, u16)> = a
        .timestamps()
        .iter()
        .map(|&t| (t, a.channel))
        .chain(b.timestamps().iter().map(|&t| (t, b.channel)))
        .collect();
    merged.sort_unstable();
    let path = ctx.path(None, "csv");
    let mut w = std::io::BufWriter::new(std::fs::File::create(&path)?);
    for line in &ctx.header {
        writeln!(w, "# {line}")?;
    }
    writeln!(w, "channel,timestamp_ps")?;
    for (t, ch) in merged {
        writeln!(w, "{ch},{t}")?;
    }
    w.flush()?;
    Ok(format!(
        "timetag-synth: channel {} {} tags, channel {} {} tags; {}",
        a.channel,
        a.len(),
        b.channel,
        b.len(),
        path.display()
    ))
}

fn timetag_count(ctx: &Ctx, input: Option<&Path>, scan_ns: f64, scan_step_ns: f64) -> Result<String> {
    let cfg = ctx.cfg;
    let (a, b) = match input {
        Some(p) => {
            let mut streams = read_timetags(p, 1)?.into_iter();
            match (streams.next(), streams.next()) {
                (Some(a), Some(b)) => (a, b),
                _ => return Err(Error::Format(format!("{}: need two channels", p.display()))),
            }
        }
        None => synth(cfg)?,
    };
    let window = cfg.timetag.window_s;
    let c = count_coincidences(&a, &b, window, 0.0)?;
    let delays: Vec<f64> = steps(-scan_ns, scan_ns, scan_step_ns)?
        .into_iter()
        .map(|d| d * 1e-9)
        .collect();
    let scan = delay_scan(&a, &b, window, &delays)?;
    let path = ctx.path(None, "csv");
    write_delay_scan(&scan, &path, &ctx.header)?;
    Ok(format!(
        "timetag-count: {} coincidences, singles {}/{}, heralding {:.4}/{:.4}, accidentals {:.1} (rate {:.3} Hz); {}",
        c.coincidences,
        c.singles_a,
        c.singles_b,
        c.heralding_a(),
        c.heralding_b(),
        c.accidental_rate_hz * c.duration_s,
        c.accidental_rate_hz,
        path.display()
    ))
}
