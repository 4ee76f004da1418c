//! Command-line front end: simulate a phantom acquisition, estimate coil
//! maps, reconstruct with the untrained prior, run the GRAPPA baseline, and
//! evaluate image quality.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use umri_core::calibration::{
    espirit_maps, extract_acs, grappa_apply, grappa_calibrate, rsos_image, GrappaGeometry,
    ESPIRIT_DEFAULT_EIG_THRESH, ESPIRIT_DEFAULT_KERNEL, ESPIRIT_DEFAULT_SV_THRESH,
};
use umri_core::error::Error;
use umri_core::io::{
    array_to_image, array_to_kspace, array_to_maps, array_to_mask, array_to_tensor,
    image_to_array, kspace_to_array, maps_to_array, mask_to_array, read_array, tensor_to_array,
    ArrayData, ArrayFile, RunConfig,
};
use umri_core::metrics::evaluate;
use umri_core::mri::SamplingMask;
use umri_core::runner::{reconstruct, ReconConfig, ReconResult};
use umri_core::simulate::{
    sample_pattern, shepp_logan, simulate_acquisition, simulate_coils, Pattern,
};
use umri_core::unet::UNetConfig;
use umri_core::Tensor64;

#[derive(Parser)]
#[command(
    name = "umri",
    version,
    about = "Scan-specific parallel MRI reconstruction with an untrained convolutional prior"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a multi-coil phantom acquisition and write all arrays.
    Simulate {
        #[arg(long, default_value_t = 64)]
        h: usize,
        #[arg(long, default_value_t = 64)]
        w: usize,
        #[arg(long, default_value_t = 8)]
        coils: usize,
        /// Sampling pattern: uniform1d or uniform2d.
        #[arg(long, default_value = "uniform1d")]
        pattern: String,
        /// Acceleration: an integer like `4`, or `R1xR2` for uniform2d.
        #[arg(long, default_value = "4")]
        r: String,
        /// ACS extent: rows for uniform1d, square side for uniform2d.
        #[arg(long, default_value_t = 16)]
        acs: usize,
        /// Absolute complex-Gaussian noise std per component.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        /// Noise std as a fraction of the peak k-space magnitude
        /// (overrides --noise when set).
        #[arg(long)]
        noise_rel: Option<f64>,
        /// Amplitude of the smooth synthetic phase, in radians.
        #[arg(long, default_value_t = 0.5)]
        phase_strength: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Estimate coil sensitivity maps from the ACS region.
    Maps {
        #[arg(long)]
        kspace: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = ESPIRIT_DEFAULT_KERNEL)]
        kernel: usize,
        #[arg(long, default_value_t = ESPIRIT_DEFAULT_SV_THRESH)]
        sv_thresh: f64,
        #[arg(long, default_value_t = ESPIRIT_DEFAULT_EIG_THRESH)]
        eig_thresh: f64,
    },
    /// Reconstruct one acquisition by fitting the untrained network.
    Recon {
        #[arg(long)]
        kspace: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        maps: PathBuf,
        /// Optional run-configuration file supplying defaults for the
        /// network/optimization flags (explicit flags win).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        filters: Option<usize>,
        #[arg(long)]
        depth: Option<usize>,
        #[arg(long)]
        kernel_size: Option<usize>,
        #[arg(long)]
        slope: Option<f64>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        checkpoint_every: Option<usize>,
        #[arg(long)]
        checkpoint_dir: Option<PathBuf>,
        /// Stop early when the loss plateaus.
        #[arg(long, default_value_t = false)]
        plateau_stop: bool,
        #[arg(long)]
        out: PathBuf,
        /// Per-iteration loss history (`iter,data,reg,total`).
        #[arg(long)]
        history_csv: Option<PathBuf>,
    },
    /// GRAPPA baseline: fill missing k-space and write the rsos image.
    Grappa {
        #[arg(long)]
        kspace: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        /// Output directory for kspace_filled.nldt and rsos.nldt.
        #[arg(long)]
        out: PathBuf,
        /// Acceleration override; inferred from the mask rows when omitted.
        #[arg(long)]
        r: Option<usize>,
        #[arg(long, default_value_t = 1e-9)]
        ridge: f64,
        #[arg(long, default_value_t = 4)]
        source_lines: usize,
        #[arg(long, default_value_t = 5)]
        taps: usize,
    },
    /// Compare two images (complex inputs are reduced to magnitude).
    Eval {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        out_csv: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.cmd {
        Command::Simulate {
            h,
            w,
            coils,
            pattern,
            r,
            acs,
            noise,
            noise_rel,
            phase_strength,
            seed,
            out_dir,
        } => {
            let pattern = parse_pattern(&pattern, &r)?;
            let mask = sample_pattern(pattern, h, w, acs)?;
            let truth = shepp_logan::<f64>(h, w, phase_strength, seed)?;
            let maps = simulate_coils::<f64>(coils, h, w, seed.wrapping_add(1))?;
            let sigma = match noise_rel {
                Some(rel) => {
                    if rel < 0.0 {
                        return Err(Error::Config("noise_rel must be >= 0".into()));
                    }
                    let (clean, _) = simulate_acquisition(&truth, &maps, &mask, 0.0, seed)?;
                    let kmax = clean
                        .data()
                        .iter()
                        .fold(0.0f64, |m, v| m.max(v.norm()));
                    rel * kmax
                }
                None => noise,
            };
            let (d_full, d_u) =
                simulate_acquisition(&truth, &maps, &mask, sigma, seed.wrapping_add(2))?;
            std::fs::create_dir_all(&out_dir)?;
            write(&out_dir.join("truth.nldt"), &image_to_array(&truth))?;
            write(&out_dir.join("maps.nldt"), &maps_to_array(&maps))?;
            write(&out_dir.join("mask.nldt"), &mask_to_array(&mask))?;
            write(&out_dir.join("kspace_full.nldt"), &kspace_to_array(&d_full))?;
            write(&out_dir.join("kspace_und.nldt"), &kspace_to_array(&d_u))?;
            println!(
                "wrote {h}x{w} phantom with {coils} coils to {}",
                out_dir.display()
            );
            println!(
                "noise sigma {sigma}, effective acceleration {:.3}",
                mask.effective_acceleration()
            );
            Ok(())
        }
        Command::Maps {
            kspace,
            mask,
            out,
            kernel,
            sv_thresh,
            eig_thresh,
        } => {
            let d = array_to_kspace(&read_array(&kspace)?)?;
            let mask = array_to_mask(&read_array(&mask)?)?;
            let (_, h, w) = d.dims();
            let acs = extract_acs(&d, &mask)?;
            let maps = espirit_maps(&acs, h, w, kernel, sv_thresh, eig_thresh)?;
            write(&out, &maps_to_array(&maps))?;
            let support = maps.support().iter().filter(|&&b| b).count();
            println!(
                "estimated {} coil maps ({support} of {} pixels on support)",
                maps.coils(),
                h * w
            );
            Ok(())
        }
        Command::Recon {
            kspace,
            mask,
            maps,
            config,
            filters,
            depth,
            kernel_size,
            slope,
            iters,
            lr,
            lambda,
            seed,
            checkpoint_every,
            checkpoint_dir,
            plateau_stop,
            out,
            history_csv,
        } => {
            let d = array_to_kspace(&read_array(&kspace)?)?;
            let mask = array_to_mask(&read_array(&mask)?)?;
            let maps = array_to_maps(&read_array(&maps)?)?;
            let base = match config {
                Some(path) => RunConfig::load(&path)?,
                None => RunConfig::default(),
            };
            let cfg = ReconConfig {
                unet: UNetConfig {
                    depth: depth.unwrap_or(base.depth),
                    filters: filters.unwrap_or(base.filters),
                    kernel: kernel_size.unwrap_or(base.kernel),
                    slope: slope.unwrap_or(base.slope),
                    seed: seed.unwrap_or(base.seed),
                },
                lr: lr.unwrap_or(base.lr),
                iterations: iters.unwrap_or(base.iters),
                lambda: lambda.unwrap_or(base.lambda),
                seed: seed.unwrap_or(base.seed),
                checkpoint_every: checkpoint_every.unwrap_or(base.checkpoint_every),
                checkpoint_dir,
                plateau_stop,
            };
            let res = reconstruct(&d, &maps, &mask, &cfg)?;
            write(&out, &image_to_array(&res.image))?;
            if let Some(path) = history_csv {
                write_history(&path, &res)?;
            }
            let last = res.loss_history.last().expect("at least one iteration");
            println!(
                "reconstructed in {} iterations; final data term {:e}, total {:e}",
                res.iterations_run, last.data, last.total
            );
            Ok(())
        }
        Command::Grappa {
            kspace,
            mask,
            out,
            r,
            ridge,
            source_lines,
            taps,
        } => {
            let d = array_to_kspace(&read_array(&kspace)?)?;
            let mask = array_to_mask(&read_array(&mask)?)?;
            let r = match r {
                Some(r) => r,
                None => infer_acceleration(&mask)?,
            };
            let acs = extract_acs(&d, &mask)?;
            let geometry = GrappaGeometry {
                source_lines,
                readout_taps: taps,
            };
            let kernel = grappa_calibrate(&acs, r, geometry, ridge)?;
            let filled = grappa_apply(&d, &kernel, &mask)?;
            let magnitude = rsos_image(&filled)?;
            std::fs::create_dir_all(&out)?;
            write(&out.join("kspace_filled.nldt"), &kspace_to_array(&filled))?;
            write(&out.join("rsos.nldt"), &tensor_to_array(&magnitude))?;
            println!(
                "filled acceleration-{r} k-space; outputs in {}",
                out.display()
            );
            Ok(())
        }
        Command::Eval {
            reference,
            test,
            out_csv,
        } => {
            let r = load_magnitude(&reference)?;
            let t = load_magnitude(&test)?;
            let report = evaluate(&r, &t)?;
            let csv = format!(
                "psnr_db,ssim,nrmse\n{},{},{}\n",
                report.psnr_db, report.ssim, report.nrmse
            );
            print!("{csv}");
            if report.psnr_capped {
                eprintln!("note: images are identical up to the PSNR cap");
            }
            if let Some(path) = out_csv {
                std::fs::write(path, csv)?;
            }
            Ok(())
        }
    }
}

fn write(path: &Path, array: &ArrayFile) -> Result<(), Error> {
    umri_core::io::write_array(path, array)
}

fn parse_pattern(kind: &str, r: &str) -> Result<Pattern, Error> {
    let parse_int = |s: &str| -> Result<usize, Error> {
        s.trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad acceleration value {s:?}")))
    };
    match kind {
        "uniform1d" => Ok(Pattern::Uniform1d { r: parse_int(r)? }),
        "uniform2d" => {
            let (r1, r2) = match r.split_once(['x', 'X']) {
                Some((a, b)) => (parse_int(a)?, parse_int(b)?),
                None => {
                    let v = parse_int(r)?;
                    (v, v)
                }
            };
            Ok(Pattern::Uniform2d { r: (r1, r2) })
        }
        other => Err(Error::Config(format!(
            "unknown pattern {other:?} (expected uniform1d or uniform2d)"
        ))),
    }
}

/// Acceleration of a uniform 1-D row mask: the smallest spacing between
/// fully sampled rows outside the ACS band.
fn infer_acceleration(mask: &SamplingMask) -> Result<usize, Error> {
    let (h, w) = mask.dims();
    let acs = mask.acs();
    let mut rows = Vec::new();
    for y in 0..h {
        let full = (0..w).all(|x| mask.is_sampled(y, x));
        let in_acs = y >= acs.y0 && y < acs.y0 + acs.h && acs.w == w;
        if full && !in_acs {
            rows.push(y);
        }
    }
    let r = rows
        .windows(2)
        .map(|p| p[1] - p[0])
        .min()
        .ok_or_else(|| {
            Error::Config(
                "cannot infer the acceleration factor from the mask; pass --r".into(),
            )
        })?;
    if r < 2 {
        return Err(Error::Config(format!(
            "inferred acceleration {r}; GRAPPA needs r >= 2"
        )));
    }
    Ok(r)
}

fn load_magnitude(path: &Path) -> Result<Tensor64, Error> {
    let array = read_array(path)?;
    match &array.data {
        ArrayData::Real32(_) | ArrayData::Real64(_) => array_to_tensor(&array),
        ArrayData::Complex64(_) | ArrayData::Complex128(_) => {
            Ok(array_to_image(&array)?.magnitude())
        }
    }
}

fn write_history(path: &Path, res: &ReconResult<f64>) -> Result<(), Error> {
    let mut out = String::from("iter,data,reg,total\n");
    for (i, e) in res.loss_history.iter().enumerate() {
        out.push_str(&format!("{},{},{},{}\n", i + 1, e.data, e.reg, e.total));
    }
    std::fs::write(path, out)?;
    Ok(())
}
