//! HPL (High-Performance Linpack) support: sizing an `HPL.dat` from node
//! memory, building the host-MPI launch command, reading result rows back out
//! of HPL output, and comparing GFLOPS against the theoretical peak.

use thiserror::Error;

use crate::cluster::JobSpec;
use crate::repro::{Compatibility, ImageRef};

pub const DEFAULT_NB: u64 = 192;
pub const DEFAULT_MEM_FRACTION: f64 = 0.8;
pub const INPUT_FILE_NAME: &str = "HPL.dat";

/// Efficiency band reported for containerized HPL runs, inclusive.
pub const EFFICIENCY_BAND: (f64, f64) = (0.73, 0.78);

#[derive(Debug, Error, PartialEq)]
pub enum HplError {
    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
    #[error("memory too small: largest N is {max_n}, below one block of NB={nb}")]
    Infeasible { max_n: u64, nb: u64 },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("theoretical peak must be positive, got {0}")]
    NonpositiveRmax(f64),
    #[error("measured GFLOPS must be positive, got {0}")]
    NonpositiveGflops(f64),
    #[error("container MPI is incompatible with the host: {0}")]
    IncompatibleMpi(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HplConfig {
    pub n: u64,
    pub nb: u64,
    pub p: u64,
    pub q: u64,
    pub total_procs: u64,
    pub mem_fraction: f64,
}

/// Factor pair `(p, q)` of `total` with `p <= q` and `q - p` minimal.
pub fn process_grid(total: u64) -> (u64, u64) {
    assert!(total > 0, "process grid needs at least one process");
    let p = (1..=total.isqrt()).rev().find(|p| total.is_multiple_of(*p)).unwrap_or(1);
    (p, total / p)
}

/// Sizes an HPL run to `mem_fraction` of aggregate node memory.
///
/// N is the largest multiple of `nb` whose N×N double matrix fits in
/// `floor(mem_fraction × nodes × mem_per_node_bytes)` bytes; the process grid
/// is the squarest factorization of `nodes × cores_per_node`.
pub fn generate_hpl_input(
    nodes: u64,
    cores_per_node: u64,
    mem_per_node_bytes: u64,
    mem_fraction: f64,
    nb: u64,
) -> Result<(HplConfig, String), HplError> {
    if nodes == 0 || cores_per_node == 0 || mem_per_node_bytes == 0 || nb == 0 {
        return Err(HplError::InvalidArgument("nodes, cores, memory and NB must all be positive"));
    }
    if !(mem_fraction > 0.0 && mem_fraction <= 1.0) {
        return Err(HplError::InvalidArgument("memory fraction must lie in (0, 1]"));
    }
    let total_bytes = u128::from(nodes) * u128::from(mem_per_node_bytes);
    let budget_bytes = (mem_fraction * total_bytes as f64).floor() as u128;
    let max_n = u64::try_from((budget_bytes / 8).isqrt()).unwrap_or(u64::MAX);
    let n = max_n - max_n % nb;
    if n < nb {
        return Err(HplError::Infeasible { max_n, nb });
    }
    let total_procs = nodes.checked_mul(cores_per_node).ok_or(HplError::InvalidArgument("nodes × cores overflows"))?;
    let (p, q) = process_grid(total_procs);
    let config = HplConfig { n, nb, p, q, total_procs, mem_fraction };
    let text = render_hpl_dat(&config);
    Ok((config, text))
}

/// Standard 31-line HPL.dat with a single N, NB, and grid.
pub fn render_hpl_dat(c: &HplConfig) -> String {
    let rows: [(String, &str); 31] = [
        ("HPLinpack benchmark input file".into(), ""),
        ("Innovative Computing Laboratory, University of Tennessee".into(), ""),
        ("HPL.out".into(), "output file name (if any)"),
        ("6".into(), "device out (6=stdout,7=stderr,file)"),
        ("1".into(), "# of problems sizes (N)"),
        (c.n.to_string(), "Ns"),
        ("1".into(), "# of NBs"),
        (c.nb.to_string(), "NBs"),
        ("0".into(), "PMAP process mapping (0=Row-,1=Column-major)"),
        ("1".into(), "# of process grids (P x Q)"),
        (c.p.to_string(), "Ps"),
        (c.q.to_string(), "Qs"),
        ("16.0".into(), "threshold"),
        ("1".into(), "# of panel fact"),
        ("2".into(), "PFACTs (0=left, 1=Crout, 2=Right)"),
        ("1".into(), "# of recursive stopping criterium"),
        ("4".into(), "NBMINs (>= 1)"),
        ("1".into(), "# of panels in recursion"),
        ("2".into(), "NDIVs"),
        ("1".into(), "# of recursive panel fact."),
        ("1".into(), "RFACTs (0=left, 1=Crout, 2=Right)"),
        ("1".into(), "# of broadcast"),
        ("1".into(), "BCASTs (0=1rg,1=1rM,2=2rg,3=2rM,4=Lng,5=LnM)"),
        ("1".into(), "# of lookahead depth"),
        ("1".into(), "DEPTHs (>=0)"),
        ("2".into(), "SWAP (0=bin-exch,1=long,2=mix)"),
        ("64".into(), "swapping threshold"),
        ("0".into(), "L1 in (0=transposed,1=no-transposed) form"),
        ("0".into(), "U  in (0=transposed,1=no-transposed) form"),
        ("1".into(), "Equilibration (0=no,1=yes)"),
        ("8".into(), "memory alignment in double (> 0)"),
    ];
    let mut out = String::new();
    for (value, comment) in rows {
        if comment.is_empty() {
            out.push_str(&value);
        } else {
            out.push_str(&format!("{value:<13}{comment}"));
        }
        out.push('\n');
    }
    out
}

/// Problem sizes, block sizes and grids read from an HPL.dat.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HplDat {
    pub ns: Vec<u64>,
    pub nbs: Vec<u64>,
    pub grids: Vec<(u64, u64)>,
}

pub fn parse_hpl_dat(text: &str) -> Result<HplDat, HplError> {
    let lines: Vec<&str> = text.lines().collect();
    let line = |i: usize| -> Result<&str, HplError> {
        lines.get(i).copied().ok_or(HplError::Parse { line: i + 1, reason: "file ends early".into() })
    };
    let values = |i: usize, count: usize| -> Result<Vec<u64>, HplError> {
        let bad = |reason: String| HplError::Parse { line: i + 1, reason };
        let toks: Vec<&str> = line(i)?.split_whitespace().take(count).collect();
        if toks.len() < count {
            return Err(bad(format!("expected {count} values")));
        }
        toks.iter()
            .map(|t| match t.parse::<u64>() {
                Ok(v) if v > 0 => Ok(v),
                _ => Err(bad(format!("{t:?} is not a positive integer"))),
            })
            .collect()
    };
    let count = |i: usize| -> Result<usize, HplError> {
        let v = values(i, 1)?[0];
        if v > 20 {
            return Err(HplError::Parse { line: i + 1, reason: format!("count {v} exceeds 20") });
        }
        Ok(v as usize)
    };

    let ns = values(5, count(4)?)?;
    let nbs = values(7, count(6)?)?;
    let grid_count = count(9)?;
    let ps = values(10, grid_count)?;
    let qs = values(11, grid_count)?;
    Ok(HplDat { ns, nbs, grids: ps.into_iter().zip(qs).collect() })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HplResult {
    pub n: u64,
    pub nb: u64,
    pub p: u64,
    pub q: u64,
    pub time_s: f64,
    pub gflops: f64,
}

fn is_tv_code(tok: &str) -> bool {
    // e.g. WR11C2R4: W, R|C, two digits, L|C|R, digit, L|C|R, digit
    let b = tok.as_bytes();
    b.len() == 8
        && b[0] == b'W'
        && matches!(b[1], b'R' | b'C')
        && b[2].is_ascii_digit()
        && b[3].is_ascii_digit()
        && matches!(b[4], b'L' | b'C' | b'R')
        && b[5].is_ascii_digit()
        && matches!(b[6], b'L' | b'C' | b'R')
        && b[7].is_ascii_digit()
}

/// Extracts every result row (`T/V N NB P Q Time Gflops`) from HPL output.
/// Lines that do not start with a T/V code are ignored; a T/V row that does
/// not parse is an error.
pub fn parse_hpl_output(text: &str) -> Result<Vec<HplResult>, HplError> {
    let mut results = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let toks: Vec<&str> = raw.split_whitespace().collect();
        if !toks.first().is_some_and(|t| is_tv_code(t)) {
            continue;
        }
        let bad = |reason: String| HplError::Parse { line: idx + 1, reason };
        if toks.len() != 7 {
            return Err(bad(format!("result row has {} fields, expected 7", toks.len())));
        }
        let int = |i: usize, name: &str| -> Result<u64, HplError> {
            match toks[i].parse::<u64>() {
                Ok(v) if v > 0 => Ok(v),
                _ => Err(bad(format!("{name} {:?} is not a positive integer", toks[i]))),
            }
        };
        let real = |i: usize, name: &str| -> Result<f64, HplError> {
            match toks[i].parse::<f64>() {
                Ok(v) if v.is_finite() && v > 0.0 => Ok(v),
                _ => Err(bad(format!("{name} {:?} is not a positive number", toks[i]))),
            }
        };
        results.push(HplResult {
            n: int(1, "N")?,
            nb: int(2, "NB")?,
            p: int(3, "P")?,
            q: int(4, "Q")?,
            time_s: real(5, "Time")?,
            gflops: real(6, "Gflops")?,
        });
    }
    Ok(results)
}

/// Highest-GFLOPS row; the first one wins ties.
pub fn best_result(results: &[HplResult]) -> Option<&HplResult> {
    results.iter().reduce(|best, r| if r.gflops > best.gflops { r } else { best })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EfficiencyReport {
    pub gflops: f64,
    pub rmax_gflops: f64,
    pub ratio: f64,
    pub in_band: bool,
}

pub fn efficiency(gflops: f64, rmax_gflops: f64) -> Result<EfficiencyReport, HplError> {
    if !(rmax_gflops.is_finite() && rmax_gflops > 0.0) {
        return Err(HplError::NonpositiveRmax(rmax_gflops));
    }
    if !(gflops.is_finite() && gflops > 0.0) {
        return Err(HplError::NonpositiveGflops(gflops));
    }
    let ratio = gflops / rmax_gflops;
    let (lo, hi) = EFFICIENCY_BAND;
    Ok(EfficiencyReport { gflops, rmax_gflops, ratio, in_band: (lo..=hi).contains(&ratio) })
}

/// Host-side launch line for the hybrid MPI model: the host `mpirun` starts
/// one container process per rank.
pub fn build_hybrid_command(
    job: &JobSpec,
    image: &ImageRef,
    compat: &Compatibility,
    input_file: &str,
) -> Result<String, HplError> {
    if let Compatibility::Incompatible(reason) = compat {
        return Err(HplError::IncompatibleMpi(reason.clone()));
    }
    let input = input_file.strip_prefix("./").unwrap_or(input_file);
    Ok(format!("mpirun -np {} singularity exec {} xhpl ./{}", job.num_procs(), image.sif_file_name(), input))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_node_sizing() {
        let (cfg, text) = generate_hpl_input(4, 6, 64_000_000_000, 0.8, 192).unwrap();
        assert_eq!(cfg.n, 159_936);
        assert_eq!((cfg.p, cfg.q), (4, 6));
        assert_eq!(text.lines().count(), 31);
        assert!(text.lines().nth(5).unwrap().starts_with("159936 "));
    }

    #[test]
    fn grid_edge_cases() {
        assert_eq!(process_grid(1), (1, 1));
        assert_eq!(process_grid(24), (4, 6));
        assert_eq!(process_grid(13), (1, 13));
        assert_eq!(process_grid(64), (8, 8));
    }

    #[test]
    fn infeasible_when_memory_below_one_block() {
        // 8 * 100^2 bytes fits N=100 < NB=192
        assert_eq!(generate_hpl_input(1, 1, 80_000, 1.0, 192), Err(HplError::Infeasible { max_n: 100, nb: 192 }));
    }

    #[test]
    fn bad_arguments() {
        assert!(generate_hpl_input(0, 1, 1, 0.5, 1).is_err());
        assert!(generate_hpl_input(1, 1, 1 << 30, 0.0, 1).is_err());
        assert!(generate_hpl_input(1, 1, 1 << 30, 1.5, 1).is_err());
        assert!(generate_hpl_input(1, 1, 1 << 30, f64::NAN, 1).is_err());
    }

    #[test]
    fn dat_round_trip() {
        let (cfg, text) = generate_hpl_input(2, 8, 16_000_000_000, 0.8, 256).unwrap();
        let dat = parse_hpl_dat(&text).unwrap();
        assert_eq!(dat, HplDat { ns: vec![cfg.n], nbs: vec![cfg.nb], grids: vec![(cfg.p, cfg.q)] });
    }

    const THREE_RUNS: &str = "\
================================================================================
T/V                N    NB     P     Q               Time                 Gflops
--------------------------------------------------------------------------------
WR11C2R4       40000   192     2     3             433.33             1.0000e+02
HPL_pdgesv() start time Thu Oct  3 10:00:00 2019
||Ax-b||_oo/(eps*(||A||_oo*||x||_oo+||b||_oo)*N)=   0.0031 ...... PASSED
WR11C2R4       40000   192     2     3             412.70             1.0500e+02
WR11C2R4       40000   192     2     3             420.71             1.0300e+02
";

    #[test]
    fn best_of_three() {
        let rows = parse_hpl_output(THREE_RUNS).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(best_result(&rows).unwrap().gflops, 105.0);
        assert_eq!(rows[0].n, 40_000);
    }

    #[test]
    fn empty_output() {
        assert!(parse_hpl_output("").unwrap().is_empty());
        assert!(best_result(&[]).is_none());
    }

    #[test]
    fn non_numeric_gflops() {
        let err = parse_hpl_output("header\nWR11C2R4 1000 192 1 1 2.0 fast\n").unwrap_err();
        assert!(matches!(err, HplError::Parse { line: 2, .. }));
        assert!(parse_hpl_output("WR11C2R4 1000 192 1 1 2.0\n").is_err());
    }

    #[test]
    fn efficiency_values() {
        let r = efficiency(105.0, 140.0).unwrap();
        assert!((r.ratio - 0.75).abs() < 1e-12);
        assert!(r.in_band);
        let r = efficiency(146.0, 160.0).unwrap();
        assert!((r.ratio - 0.9125).abs() < 1e-12);
        assert!(!r.in_band);
        assert_eq!(efficiency(1.0, 0.0), Err(HplError::NonpositiveRmax(0.0)));
        assert!(efficiency(0.0, 1.0).is_err());
    }

    fn job(nodes: u32, tasks: u32) -> JobSpec {
        JobSpec {
            job_id: crate::cluster::JobId(1),
            node_count: nodes,
            tasks_per_node: tasks,
            walltime_limit: std::time::Duration::from_secs(60),
            image: ImageRef::new("hub", "hpl", "latest"),
            command: String::new(),
            submit_time: crate::time::Timestamp(0),
        }
    }

    #[test]
    fn hybrid_command() {
        let image = ImageRef::new("hub", "hpl", "latest");
        assert_eq!(
            build_hybrid_command(&job(4, 6), &image, &Compatibility::Compatible, INPUT_FILE_NAME).unwrap(),
            "mpirun -np 24 singularity exec hpl.sif xhpl ./HPL.dat"
        );
        assert_eq!(
            build_hybrid_command(&job(1, 1), &image, &Compatibility::Compatible, "./HPL.dat").unwrap(),
            "mpirun -np 1 singularity exec hpl.sif xhpl ./HPL.dat"
        );
        assert!(matches!(
            build_hybrid_command(&job(1, 1), &image, &Compatibility::Incompatible("x".into()), "HPL.dat"),
            Err(HplError::IncompatibleMpi(_))
        ));
    }
}
