//! Batch frontend for the tree-scattering library.
//!
//! Three subcommands: `dos` tabulates the density of states against its
//! Stone-formula smearing and a truncation histogram; `scatter` runs the
//! full stationary pipeline on a potential file (exceptional scan, point
//! spectra, transmission sweep, unitarity, correlations) with an invariant
//! suite deciding the exit code; `surgery` embeds an asymptotically regular
//! graph into the tree and optionally chains into `scatter` on the
//! extracted potential.
//!
//! Exit codes: 0 success, 2 invariant-suite failure, 3 input-format error.
//! Output files are CSV/JSON with a config fingerprint header line and are
//! byte-identical across runs at a fixed seed.

use clap::{Args, Parser, Subcommand};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use treescat::diag;
use treescat::dtn::tau_via_dtn;
use treescat::error::Error as LibError;
use treescat::free::{closed_walk_count, stone_dos, Supported};
use treescat::potential::NonlocalPotential;
use treescat::quad::CircleGrid;
use treescat::scattering::Scatter;
use treescat::surgery::{component_support_check, embed, AsymptoticGraph};
use treescat::tree::FiniteGraph;
use treescat::{SpectralParam, Surface, TruncatedTree, VertexId};

#[derive(Parser)]
#[command(name = "treescat", version, about = "Scattering on regular trees")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Density-of-states table: closed form, Stone smearing, truncation histogram.
    Dos(DosArgs),
    /// Full scattering report for a potential file.
    Scatter(ScatterArgs),
    /// Embed an asymptotically regular graph and extract its potential.
    Surgery(SurgeryArgs),
}

/// Knobs shared by every subcommand. A config file, when given, overrides
/// the command-line values field by field.
#[derive(Args, Serialize, Deserialize, Clone, Debug)]
struct Common {
    /// Branching number (vertex degree is q+1).
    #[arg(long, default_value_t = 2)]
    q: u32,
    /// Truncation depth of the working tree.
    #[arg(long, default_value_t = 8)]
    depth: u32,
    /// Node count for band-circle sweeps.
    #[arg(long = "s-nodes", default_value_t = 64)]
    s_nodes: usize,
    /// Smearing widths for the Stone-formula columns.
    #[arg(long = "eps-ladder", value_delimiter = ',', default_values_t = vec![1e-2, 1e-3])]
    eps_ladder: Vec<f64>,
    /// Exceptional-set detection threshold on sigma_min/sigma_max.
    #[arg(long, default_value_t = 1e-8)]
    threshold: f64,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads (0 = hardware concurrency).
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Seed for sampled checks.
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// JSON config file overriding the flags above.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct DosArgs {
    #[command(flatten)]
    common: Common,
    /// Number of energy rows in the table.
    #[arg(long, default_value_t = 401)]
    lambda_nodes: usize,
    /// Histogram bins over the band.
    #[arg(long, default_value_t = 40)]
    bins: usize,
}

#[derive(Args)]
struct ScatterArgs {
    #[command(flatten)]
    common: Common,
    /// Potential JSON file.
    potential: PathBuf,
}

#[derive(Args)]
struct SurgeryArgs {
    #[command(flatten)]
    common: Common,
    /// Graph JSON file.
    graph: PathBuf,
    /// Run the scattering report on the extracted potential.
    #[arg(long)]
    chain_scatter: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let run = match cli.command {
        Command::Dos(args) => cmd_dos(args),
        Command::Scatter(args) => cmd_scatter(args),
        Command::Surgery(args) => cmd_surgery(args),
    };
    match run {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            let format_error = matches!(
                e.downcast_ref::<LibError>(),
                Some(LibError::Format(_)) | Some(LibError::InvalidStructure(_))
            ) || e.downcast_ref::<std::io::Error>().is_some();
            if format_error {
                ExitCode::from(3)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

type AnyResult<T> = Result<T, Box<dyn std::error::Error + Send + Sync>>;

fn finalize(common: &mut Common) -> AnyResult<()> {
    if let Some(path) = &common.config {
        let text = fs::read_to_string(path)?;
        let cfg: Common =
            serde_json::from_str(&text).map_err(|e| LibError::Format(e.to_string()))?;
        let keep_config = common.config.clone();
        *common = cfg;
        common.config = keep_config;
    }
    if common.q < 2 {
        return Err(LibError::Format(format!("q = {} out of range", common.q)).into());
    }
    if common.depth < 2 || common.depth > 16 {
        return Err(LibError::Format(format!("depth = {} out of range", common.depth)).into());
    }
    if common.s_nodes < 4 || common.s_nodes > (1 << 20) {
        return Err(LibError::Format("s-nodes out of range".into()).into());
    }
    if !common.eps_ladder.iter().all(|&e| e > 0.0) {
        return Err(LibError::Format("eps ladder must be positive".into()).into());
    }
    if common.threshold <= 0.0 || common.threshold >= 1.0 {
        return Err(LibError::Format("threshold out of range".into()).into());
    }
    if common.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(common.threads)
            .build_global()
            .ok();
    }
    fs::create_dir_all(&common.out)?;
    Ok(())
}

impl Common {
    /// Stable one-line fingerprint of the effective configuration; the
    /// output directory is not part of the configuration.
    fn fingerprint(&self) -> String {
        let mut canon = self.clone();
        canon.out = PathBuf::new();
        let blob = serde_json::to_string(&canon).expect("serializable");
        let mut h: u64 = 0xcbf29ce484222325;
        for b in blob.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        format!("{h:016x}")
    }

    fn header(&self, extra: &str) -> String {
        format!(
            "# treescat {} fingerprint={} q={} depth={} s_nodes={} seed={}{}\n",
            env!("CARGO_PKG_VERSION"),
            self.fingerprint(),
            self.q,
            self.depth,
            self.s_nodes,
            self.seed,
            extra
        )
    }
}

fn write_file(path: &Path, contents: &str) -> AnyResult<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(contents.as_bytes())?;
    Ok(())
}

fn cmd_dos(mut args: DosArgs) -> AnyResult<bool> {
    finalize(&mut args.common)?;
    let c = &args.common;
    let surf = Surface::new(c.q)?;
    let edge = surf.band_edge();

    // truncation histogram of the root spectral measure; the dense
    // diagonalization is cubic, so cap the ball by vertex count
    let hist_depth = (1..=c.depth)
        .take_while(|&d| TruncatedTree::vertex_count_for(c.q, d) <= 1600)
        .last()
        .unwrap_or(1);
    let tree = TruncatedTree::new(c.q, hist_depth)?;
    let atoms = diag::root_atoms_dense(&tree);
    let masses = diag::bin_masses(&atoms, edge, args.bins);
    let bin_width = 2.0 * edge / args.bins as f64;

    let mut out = c.header(&format!(" hist_depth={hist_depth} bins={}", args.bins));
    let eps_cols: Vec<String> = c
        .eps_ladder
        .iter()
        .map(|e| format!("stone_{e:.0e}"))
        .collect();
    out.push_str(&format!("lambda,de,{},hist\n", eps_cols.join(",")));
    let rows: Vec<String> = (0..args.lambda_nodes)
        .into_par_iter()
        .map(|i| {
            let lam = -edge + 2.0 * edge * i as f64 / (args.lambda_nodes - 1) as f64;
            let mut row = format!("{lam:.12e},{:.12e}", surf.dos_density(lam));
            for &eps in &c.eps_ladder {
                row.push_str(&format!(",{:.12e}", stone_dos(&surf, lam, eps)));
            }
            let bin = (((lam + edge) / bin_width).floor() as isize).clamp(0, args.bins as isize - 1)
                as usize;
            row.push_str(&format!(",{:.12e}\n", masses[bin] / bin_width));
            row
        })
        .collect();
    for r in rows {
        out.push_str(&r);
    }
    // moment footer: quadrature moments of de against exact walk counts
    let walk_tree = TruncatedTree::new(c.q, 6)?;
    for n in 0..=8u32 {
        let quad = treescat::free::dos_integral(&surf, 2000, |lam| lam.powi(n as i32));
        let walks = closed_walk_count(&walk_tree, VertexId::ROOT, n)?;
        out.push_str(&format!(
            "# moment,n={n},quadrature={quad:.9e},walks={walks}\n"
        ));
    }
    write_file(&c.out.join("dos.csv"), &out)?;
    println!("wrote {}", c.out.join("dos.csv").display());
    Ok(true)
}

struct Suite {
    failures: Vec<String>,
}

impl Suite {
    fn new() -> Self {
        Suite {
            failures: Vec::new(),
        }
    }

    fn check(&mut self, name: &str, ok: bool, detail: String) {
        if ok {
            println!("ok      {name}: {detail}");
        } else {
            println!("FAILED  {name}: {detail}");
            self.failures.push(name.to_string());
        }
    }

    fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

fn scatter_report(c: &Common, w: &NonlocalPotential, out_dir: &Path) -> AnyResult<bool> {
    let surf = Surface::new(c.q)?;
    let tree = TruncatedTree::new(c.q, c.depth)?;
    let scat = Scatter::new(&tree, surf, w)?;
    let mut suite = Suite::new();
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);

    // exceptional scan
    let grid = CircleGrid::new(surf.tau(), c.s_nodes.max(128));
    let exc = scat.exceptional_scan(&grid, c.threshold)?;
    let mut text = c.header("");
    text.push_str("s,sigma_ratio\n");
    for &(s, r) in &exc.samples {
        text.push_str(&format!("{s:.12e},{r:.12e}\n"));
    }
    for &(a, b) in &exc.flagged {
        text.push_str(&format!("# flagged,{a:.12e},{b:.12e}\n"));
    }
    write_file(&out_dir.join("exceptional.csv"), &text)?;
    suite.check(
        "exceptional-chi-independence",
        exc.chi_independent,
        format!("{} flagged interval(s)", exc.flagged.len()),
    );

    // point spectra
    let embedded = scat.pp_embedded()?;
    let outside = scat.pp_outside()?;
    let mut text = c.header("");
    text.push_str("kind,lambda,size\n");
    for e in &embedded {
        text.push_str(&format!("embedded,{:.12e},{}\n", e.lambda, e.vector.len()));
    }
    for o in &outside {
        text.push_str(&format!("outside,{:.12e},{:.6e}\n", o.lambda, o.norm));
    }
    write_file(&out_dir.join("pp.csv"), &text)?;
    let side_bound = scat.support().len();
    let plus = outside.iter().filter(|o| o.lambda > 0.0).count();
    let minus = outside.len() - plus;
    suite.check(
        "pp-count-bounds",
        embedded.len() <= scat.support_hat().len() && plus <= side_bound && minus <= side_bound,
        format!(
            "{} embedded (<= {}), {}/{} outside (<= {})",
            embedded.len(),
            scat.support_hat().len(),
            plus,
            minus,
            side_bound
        ),
    );

    // transmission sweep and the dual-route cross-check
    let n = scat.min_ball_exponent().max(2);
    let mut text = c.header(&format!(" n={n}"));
    text.push_str("s,l,lp,tau_re,tau_im,stilde_re,stilde_im\n");
    let sweep: Vec<f64> = grid.nodes.iter().copied().take(c.s_nodes).collect();
    let blocks: Vec<AnyResult<(f64, String, f64)>> = sweep
        .par_iter()
        .map(|&sre| {
            let s = SpectralParam::real(sre);
            let data = match scat.s_tilde(s, n) {
                Ok(d) => d,
                Err(LibError::ExceptionalParameter(_)) | Err(LibError::SingularParameter(_)) => {
                    return Ok((sre, String::new(), 0.0))
                }
                Err(e) => return Err(e.into()),
            };
            let mut block = String::new();
            for l in 0..data.tau.nrows() {
                for lp in 0..data.tau.ncols() {
                    let t = data.tau[(l, lp)];
                    let st = data.s_tilde[(l, lp)];
                    block.push_str(&format!(
                        "{sre:.9e},{l},{lp},{:.9e},{:.9e},{:.9e},{:.9e}\n",
                        t.re, t.im, st.re, st.im
                    ));
                }
            }
            // cross-validate against the boundary-operator route
            let gap = match tau_via_dtn(&tree, &surf, w, s, n) {
                Ok(by_dtn) => (&by_dtn - &data.tau).norm(),
                Err(LibError::DirichletSingular(_)) => 0.0,
                Err(e) => return Err(e.into()),
            };
            Ok((sre, block, gap))
        })
        .collect();
    let mut worst_gap: f64 = 0.0;
    for b in blocks {
        let (_, block, gap) = b?;
        text.push_str(&block);
        worst_gap = worst_gap.max(gap);
    }
    write_file(&out_dir.join("smatrix.csv"), &text)?;
    suite.check(
        "transmission-dual-route",
        worst_gap < 1e-8,
        format!("max |tau_wave - tau_dtn| = {worst_gap:.3e}"),
    );

    // unitarity sweep over energies avoiding flagged parameters
    let cyls = tree.boundary_cylinders();
    let mut text = c.header("");
    text.push_str("alpha,residual\n");
    let mut worst_unit: f64 = 0.0;
    let edge = surf.band_edge();
    let mut alphas = Vec::new();
    let mut tries = 0;
    while alphas.len() < 20 && tries < 200 {
        tries += 1;
        let a = rng.gen_range(-0.95 * edge..0.95 * edge);
        let s = surf.s_of_lambda(a)?;
        if exc.is_flagged(s.re) || exc.is_flagged(surf.tau() - s.re) {
            continue;
        }
        alphas.push(a);
    }
    let pairs: Vec<_> = (0..4)
        .map(|_| {
            (
                cyls[rng.gen_range(0..cyls.len())],
                cyls[rng.gen_range(0..cyls.len())],
            )
        })
        .collect();
    for &a in &alphas {
        match scat.unitarity_residual(a, &pairs) {
            Ok(r) => {
                worst_unit = worst_unit.max(r);
                text.push_str(&format!("{a:.12e},{r:.3e}\n"));
            }
            Err(LibError::ExceptionalParameter(_)) => continue,
            Err(e) => return Err(e.into()),
        }
    }
    write_file(&out_dir.join("unitarity.csv"), &text)?;
    suite.check(
        "on-shell-unitarity",
        worst_unit < 1e-6,
        format!(
            "max residual {worst_unit:.3e} over {} energies",
            alphas.len()
        ),
    );

    // correlation spot checks
    let mut text = c.header("");
    text.push_str("lambda,x,y,lhs_re,lhs_im,rhs_re,rhs_im,abs_diff\n");
    let shallow: Vec<VertexId> = tree.vertices().filter(|&v| tree.depth_of(v) <= 3).collect();
    let mut worst_corr: f64 = 0.0;
    for _ in 0..8 {
        let x = shallow[rng.gen_range(0..shallow.len())];
        let y = shallow[rng.gen_range(0..shallow.len())];
        let lam = loop {
            let a = rng.gen_range(-0.9 * edge..0.9 * edge);
            let s = surf.s_of_lambda(a)?;
            if !exc.is_flagged(s.re) && !exc.is_flagged(surf.tau() - s.re) {
                break a;
            }
        };
        let (lhs, rhs) = scat.correlation(lam, x, y)?;
        let diff = (lhs - rhs).norm();
        worst_corr = worst_corr.max(diff);
        text.push_str(&format!(
            "{lam:.9e},{},{},{:.9e},{:.9e},{:.9e},{:.9e},{diff:.3e}\n",
            x.0, y.0, lhs.re, lhs.im, rhs.re, rhs.im
        ));
    }
    write_file(&out_dir.join("correlation.csv"), &text)?;
    suite.check(
        "correlation-green-identity",
        worst_corr < 1e-6,
        format!("max |lhs - rhs| = {worst_corr:.3e}"),
    );

    // completeness on a few random vectors
    let ac_grid = CircleGrid::new(surf.tau(), 512);
    let mut worst_comp: f64 = 0.0;
    for _ in 0..3 {
        let f: Supported = (0..4)
            .map(|_| {
                (
                    shallow[rng.gen_range(0..shallow.len())],
                    Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
                )
            })
            .collect::<std::collections::HashMap<_, _>>()
            .into_iter()
            .collect();
        let norm: f64 = f.iter().map(|&(_, v)| v.norm_sqr()).sum();
        let ac = scat.ac_mass(&f, &ac_grid)?;
        let pp = scat.pp_mass(&f, &embedded, &outside)?;
        worst_comp = worst_comp.max((norm - ac - pp).abs());
    }
    suite.check(
        "completeness",
        worst_comp < 1e-6,
        format!("max defect {worst_comp:.3e}"),
    );

    Ok(suite.passed())
}

fn cmd_scatter(mut args: ScatterArgs) -> AnyResult<bool> {
    finalize(&mut args.common)?;
    let text = fs::read_to_string(&args.potential)?;
    let (q_file, w) = NonlocalPotential::from_json(&text)?;
    if args.common.q != q_file {
        args.common.q = q_file;
    }
    scatter_report(&args.common, &w, &args.common.out.clone())
}

fn cmd_surgery(mut args: SurgeryArgs) -> AnyResult<bool> {
    finalize(&mut args.common)?;
    let c = args.common.clone();
    let text = fs::read_to_string(&args.graph)?;
    let input = FiniteGraph::parse_input(&text)?;
    let g = AsymptoticGraph::from_input(&input, Some(c.q))?;
    let result = embed(&g, c.depth)?;
    let mut doc = c.header("");
    doc.push_str(&result.to_json());
    doc.push('\n');
    write_file(&c.out.join("embedding.json"), &doc)?;
    write_file(&c.out.join("w.json"), &result.w.to_json(result.q))?;
    println!(
        "nu = {}, moves = (M1 x {}, M2 x {}), ball (m, M) = ({}, {}), |W| = {} entries",
        result.nu,
        result.n_prime,
        result.n_second,
        result.m,
        result.big_m,
        result.w.upper_triangle().count()
    );

    // support invariant across components
    let check_depth = result.usable_depth.min(c.depth);
    let tree = TruncatedTree::new(result.q, check_depth)?;
    let report = component_support_check(&result, &tree, &[0.23, 0.71, 1.19, 1.67])?;
    let mut suite = Suite::new();
    suite.check(
        "component-support",
        report.leak_out < 1e-10 && report.leak_in < 1e-10,
        format!(
            "leakage out {:.3e} / in {:.3e} over {} samples",
            report.leak_out, report.leak_in, report.samples
        ),
    );
    let mut ok = suite.passed();
    if args.chain_scatter {
        let mut chained = c.clone();
        chained.q = result.q;
        chained.depth = check_depth;
        ok &= scatter_report(&chained, &result.w, &c.out)?;
    }
    Ok(ok)
}
