use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use memcodec::attention::{implicit_map_row, linear_global_attention, materialized_linear_attention};
use memcodec::bench::{
    bench_attention, bench_codec, relative_error, random_qkv, write_codec_csv, write_scaling_csv,
};
use memcodec::codec::{
    mse, ppm_from_bytes, read_bitstream, tensor_from_bytes, write_bitstream, write_ppm, write_tensor, Codec, RateReport,
    BitstreamFile, TENSOR_MAGIC,
};
use memcodec::context::{ModelWeights, Profile};
use memcodec::entropy::symbol_rate_bits;
use memcodec::numerics::{Seed, SplitMix64, Tensor4};
use memcodec::{Error, Result};

#[derive(Parser)]
#[command(name = "memcodec", version, about = "Two-pass checkerboard latent codec with linear global attention contexts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Code a PPM image or a MEMT latent tensor.
    Encode {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value = "toy")]
        profile: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Weights file to use instead of seeded weights.
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Decode to a PPM image (`.ppm`) or to the quantized latent tensor.
    Decode {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Per-segment estimated and actual sizes of a coded file.
    RateReport {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Write the seeded weights of a profile to a file.
    Weights {
        #[arg(long, default_value = "toy")]
        profile: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
    },
    /// Quick consistency checks.
    Selftest,
    /// Scaling benchmarks.
    Bench {
        #[arg(value_enum)]
        kind: BenchKind,
        /// Comma-separated grid sizes (H = W).
        #[arg(long, value_delimiter = ',', default_value = "16,32,64")]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "toy")]
        profile: String,
        /// Write CSV here instead of stdout.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum BenchKind {
    Attention,
    Codec,
}

fn load_weights(profile: Profile, seed: u64, path: Option<&Path>) -> Result<ModelWeights> {
    match path {
        Some(p) => {
            let w = ModelWeights::from_bytes(&fs::read(p)?)?;
            if w.profile != profile {
                return Err(Error::Format(format!(
                    "weights file is for profile {}, expected {}",
                    w.profile.name, profile.name
                )));
            }
            Ok(w)
        }
        None => ModelWeights::generate(profile, Seed(seed)),
    }
}

fn is_ppm(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("ppm"))
}

fn print_report(r: &RateReport) {
    println!("{:<20} {:>9} {:>14} {:>12}", "segment", "symbols", "estimated_bits", "actual_bytes");
    for s in &r.segments {
        println!("{:<20} {:>9} {:>14.3} {:>12}", s.name, s.symbols, s.estimated_bits, s.actual_bytes);
    }
    println!(
        "{:<20} {:>9} {:>14.3} {:>12}",
        "total",
        r.segments.iter().map(|s| s.symbols).sum::<usize>(),
        r.total_estimated_bits(),
        r.total_actual_bytes()
    );
    println!("file_bytes {}  pixels {}  bpp {:.6}  estimated_bpp {:.6}", r.file_bytes, r.pixels, r.bpp(), r.estimated_bpp());
}

fn decoder_for(file: &BitstreamFile, seed: u64, weights: Option<&Path>) -> Result<Codec> {
    Codec::new(load_weights(file.profile()?, seed, weights)?)
}

fn encode(input: &Path, output: &Path, profile: &str, seed: u64, weights: Option<&Path>) -> Result<()> {
    let profile = Profile::from_name(profile)?;
    let codec = Codec::new(load_weights(profile, seed, weights)?)?;
    let bytes = fs::read(input)?;
    let coded = if bytes.starts_with(TENSOR_MAGIC) {
        codec.encode_latent(&tensor_from_bytes(&bytes)?)?
    } else {
        codec.encode_image(&ppm_from_bytes(&bytes)?)?
    };
    write_bitstream(output, &coded.file)?;
    print_report(&coded.report);
    Ok(())
}

fn decode(input: &Path, output: &Path, seed: u64, weights: Option<&Path>) -> Result<()> {
    let file = read_bitstream(input)?;
    let codec = decoder_for(&file, seed, weights)?;
    if is_ppm(output) {
        let (img, _) = codec.decode_image(&file)?;
        write_ppm(output, &img)?;
    } else {
        write_tensor(output, &codec.decode_latent(&file)?.y_hat)?;
    }
    Ok(())
}

fn selftest() -> Result<bool> {
    let mut ok = true;
    let mut check = |name: &str, pass: bool| {
        println!("{} {}", if pass { "PASS" } else { "FAIL" }, name);
        ok &= pass;
    };

    let r = symbol_rate_bits(0.0, 0.0, 1.0)?;
    check("unit gaussian rate 1.38494 bits", (r - 1.38494).abs() < 1e-4);

    let qkv = random_qkv(256, Seed(7));
    let row = implicit_map_row(&qkv, 17)?;
    let sum: f64 = row.iter().sum();
    check("implicit map row sums to one", (sum - 1.0).abs() < 1e-9 && row.iter().all(|v| (0.0..=1.0 + 4.0 * f64::EPSILON).contains(v)));
    let err = relative_error(&materialized_linear_attention(&qkv)?, &linear_global_attention(&qkv)?);
    check("linear attention bracketing equivalence", err <= 1e-9);

    for profile in [Profile::TOY, Profile::SINGLE_SLICE] {
        let codec = Codec::new(ModelWeights::generate(profile, Seed(1))?)?;
        let mut g = SplitMix64::new(Seed(2));
        let y = Tensor4::from_fn(profile.m, 4, 5, |_, _, _| 10.0 * g.next_unit() - 5.0);
        let enc = codec.encode_latent(&y)?;
        let dec = codec.decode_latent(&BitstreamFile::from_bytes(&enc.file.to_bytes())?)?;
        check(
            &format!("{} profile latent round trip", profile.name),
            dec.y_hat == enc.y_hat && dec.trace == enc.trace,
        );
    }

    let codec = Codec::new(ModelWeights::generate(Profile::TOY, Seed(3))?)?;
    let img = Tensor4::from_fn(3, 32, 32, |c, h, w| ((c * 31 + h * 7 + w * 3) % 64) as f64 / 63.0);
    let enc = codec.encode_image(&img)?;
    let (rec, dec) = codec.decode_image(&enc.file)?;
    check("image round trip", dec.y_hat == enc.y_hat && mse(&img, &rec)?.is_finite());
    Ok(ok)
}

fn bench(kind: BenchKind, sizes: &[usize], repeats: usize, seed: u64, profile: &str, csv: Option<&Path>) -> Result<()> {
    let out: Box<dyn io::Write> = match csv {
        Some(p) => Box::new(fs::File::create(p)?),
        None => Box::new(io::stdout()),
    };
    match kind {
        BenchKind::Attention => write_scaling_csv(out, &bench_attention(sizes, repeats, Seed(seed))?),
        BenchKind::Codec => write_codec_csv(
            out,
            &bench_codec(sizes, Profile::from_name(profile)?, repeats, Seed(seed))?,
        ),
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Encode {
            input,
            output,
            profile,
            seed,
            weights,
        } => encode(&input, &output, &profile, seed, weights.as_deref())?,
        Command::Decode {
            input,
            output,
            seed,
            weights,
        } => decode(&input, &output, seed, weights.as_deref())?,
        Command::RateReport { input, seed, weights } => {
            let file = read_bitstream(&input)?;
            let codec = decoder_for(&file, seed, weights.as_deref())?;
            print_report(&codec.decode_latent(&file)?.report);
        }
        Command::Weights { profile, seed, output } => {
            let w = ModelWeights::generate(Profile::from_name(&profile)?, Seed(seed))?;
            fs::write(&output, w.to_bytes())?;
            println!("{} parameters, digest {:016x}", w.parameter_count(), w.digest());
        }
        Command::Selftest => return selftest(),
        Command::Bench {
            kind,
            sizes,
            repeats,
            seed,
            profile,
            csv,
        } => bench(kind, &sizes, repeats, seed, &profile, csv.as_deref())?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("memcodec: {}", e);
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
