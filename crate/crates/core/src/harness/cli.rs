//! Command-line interface. Exit codes: 0 success, 1 usage error,
//! 2 runtime error. All randomness flows from `--seed` (or the config
//! seed); trajectory i uses stream seed + i.

use crate::chem::{
    fragment_molecule, infer_bonds, parse_structure, serialize_structure, AtomTypeVocab, Molecule,
    Pocket, Structure,
};
use crate::compose::{
    choose_alignment, parse_prober_file, sample_dual, AlignmentCriterion, ComposeOptions,
    CompositionMode, ProberPosePair,
};
use crate::diffusion::{make_schedule, sample_single, training_loss, NoiseSchedule, RngNoise};
use crate::egnn::{Adam, NetworkParams};
use crate::geom::RigidTransform;
use crate::harness::config::Config;
use crate::harness::eval::{evaluate, format_report, select_fragment_pair, ScoredFragment, SelectionMode};
use crate::harness::scorer::{MockScorer, ScorerInterface};
use crate::synergy::{evaluate_table, manifest, parse_combination_table};
use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "dualgen", version, about = "Dual-target pocket-conditioned molecule generation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a denoiser on one pocket/ligand pair (toy scale).
    Train {
        #[arg(long)]
        pocket: PathBuf,
        #[arg(long)]
        ligand: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 30)]
        epochs: usize,
        #[arg(long, default_value_t = 8)]
        steps: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Generate molecules for one pocket.
    SampleSingle {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        pocket: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        n: usize,
        #[arg(long)]
        n_atoms: Option<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Generate molecules under two pockets by compositional sampling.
    SampleDual {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        p1: PathBuf,
        #[arg(long)]
        p2: PathBuf,
        #[arg(long)]
        probers: Option<PathBuf>,
        #[arg(long, default_value = "center")]
        criterion: String,
        #[arg(long, default_value = "compdiff")]
        mode: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        n: usize,
        #[arg(long)]
        n_atoms: Option<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compute the P₂-alignment transform only.
    Align {
        #[arg(long)]
        p1: PathBuf,
        #[arg(long)]
        p2: PathBuf,
        #[arg(long)]
        probers: Option<PathBuf>,
        #[arg(long, default_value = "center")]
        criterion: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a dose-response table and emit the synergy manifest.
    Synergy {
        #[arg(long)]
        table: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fragment molecules at rotatable bonds; optionally select the best
    /// cross-molecule fragment pair.
    Fragment {
        #[arg(long)]
        molecule: PathBuf,
        #[arg(long)]
        mol2: Option<PathBuf>,
        #[arg(long)]
        p1: Option<PathBuf>,
        #[arg(long)]
        p2: Option<PathBuf>,
        #[arg(long, default_value = "joint")]
        mode: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score generated molecules against two pockets and references.
    Evaluate {
        #[arg(long)]
        mols: PathBuf,
        #[arg(long)]
        p1: PathBuf,
        #[arg(long)]
        p2: PathBuf,
        #[arg(long)]
        ref1: PathBuf,
        #[arg(long)]
        ref2: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

enum CliError {
    Usage(String),
    Runtime(String),
}

type CliResult<T> = Result<T, CliError>;

fn usage<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Usage(e.to_string())
}

fn runtime<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

fn read(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn write(path: &Path, content: &str) -> CliResult<()> {
    std::fs::write(path, content).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn load_pocket(path: &Path) -> CliResult<Pocket> {
    match parse_structure(&read(path)?).map_err(runtime)? {
        Structure::Pocket(p) => Ok(p),
        Structure::Molecule(_) => Err(runtime(format!(
            "{}: expected a pocket (POCKET: name prefix)",
            path.display()
        ))),
    }
}

fn load_molecule(path: &Path) -> CliResult<Molecule> {
    match parse_structure(&read(path)?).map_err(runtime)? {
        Structure::Molecule(m) => Ok(m),
        Structure::Pocket(_) => Err(runtime(format!("{}: expected a molecule", path.display()))),
    }
}

fn load_config(path: &Option<PathBuf>, seed: Option<u64>) -> CliResult<Config> {
    let mut cfg = match path {
        Some(p) => Config::parse(&read(p)?).map_err(usage)?,
        None => Config::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn schedule_from(cfg: &Config) -> CliResult<NoiseSchedule> {
    make_schedule(cfg.schedule, cfg.t_steps, cfg.beta_min, cfg.beta_max).map_err(usage)
}

fn load_probers(
    path: &Option<PathBuf>,
    criterion: AlignmentCriterion,
    vocab: &AtomTypeVocab,
) -> CliResult<Vec<ProberPosePair>> {
    match (path, criterion) {
        (_, AlignmentCriterion::Center) => Ok(Vec::new()),
        (Some(p), _) => parse_prober_file(&read(p)?, vocab).map_err(runtime),
        (None, _) => Err(usage(
            "criterion requires --probers (only 'center' works without)",
        )),
    }
}

/// Vocabulary matching a checkpoint's class count: the first K default
/// elements.
fn vocab_for(lig_classes: usize) -> CliResult<AtomTypeVocab> {
    let full = AtomTypeVocab::default_ligand();
    if lig_classes > full.len() {
        return Err(runtime(format!(
            "checkpoint has {lig_classes} ligand classes, more than the {} known elements",
            full.len()
        )));
    }
    let names = (0..lig_classes).map(|i| full.element(i).to_string()).collect();
    AtomTypeVocab::new(names).map_err(runtime)
}

fn format_transform(tr: &RigidTransform, prober_id: Option<&str>) -> String {
    let r = tr.rotation();
    let t = tr.translation();
    let mut out = String::from("TRANSFORM\n");
    for i in 0..3 {
        out.push_str(&format!("R {} {} {}\n", r[(i, 0)], r[(i, 1)], r[(i, 2)]));
    }
    out.push_str(&format!("T {} {} {}\n", t[0], t[1], t[2]));
    out.push_str(&format!("PROBER {}\n", prober_id.unwrap_or("-")));
    out
}

fn out_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn atom_count(fixed: Option<usize>, cfg: &Config, rng: &mut ChaCha8Rng) -> usize {
    fixed.unwrap_or_else(|| rng.gen_range(cfg.n_atoms_min..=cfg.n_atoms_max))
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.cmd {
        Cmd::Train {
            pocket,
            ligand,
            out,
            config,
            epochs,
            steps,
            lr,
            seed,
        } => {
            let cfg = load_config(&config, seed)?;
            let pocket = load_pocket(&pocket)?;
            let mol = infer_bonds(&load_molecule(&ligand)?);
            let schedule = schedule_from(&cfg)?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut params =
                NetworkParams::init(cfg.egnn_config(mol.vocab.len()), &mut rng);
            let mut opt = Adam::new(lr, params.flat_len());
            let mut noise = RngNoise::new(ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1)));
            for epoch in 0..epochs {
                let mut total = 0.0;
                for _ in 0..steps {
                    let (loss, grads) = training_loss(
                        &params,
                        &mol,
                        &pocket,
                        cfg.k_neighbors,
                        &schedule,
                        &mut noise,
                    )
                    .map_err(runtime)?;
                    opt.update(&mut params, &grads);
                    total += loss;
                }
                println!("epoch {epoch} loss {:.6}", total / steps as f64);
            }
            write(&out, &params.to_text())
        }
        Cmd::SampleSingle {
            checkpoint,
            pocket,
            out,
            n,
            n_atoms,
            config,
            seed,
        } => {
            let cfg = load_config(&config, seed)?;
            let params = NetworkParams::from_text(&read(&checkpoint)?).map_err(runtime)?;
            let vocab = vocab_for(params.cfg.lig_classes)?;
            let pocket = load_pocket(&pocket)?;
            let schedule = schedule_from(&cfg)?;
            out_dir(&out)?;
            for i in 0..n {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(i as u64));
                let count = atom_count(n_atoms, &cfg, &mut rng);
                let mut noise = RngNoise::new(rng);
                let name = format!("mol_{i:03}");
                let mol = sample_single(
                    &params,
                    &pocket,
                    &vocab,
                    count,
                    &schedule,
                    cfg.k_neighbors,
                    &mut noise,
                    false,
                    &name,
                )
                .map_err(runtime)?;
                write(
                    &out.join(format!("{name}.txt")),
                    &serialize_structure(&Structure::Molecule(mol)),
                )?;
            }
            Ok(())
        }
        Cmd::SampleDual {
            checkpoint,
            p1,
            p2,
            probers,
            criterion,
            mode,
            out,
            n,
            n_atoms,
            config,
            seed,
        } => {
            let cfg = load_config(&config, seed)?;
            let criterion: AlignmentCriterion = criterion.parse().map_err(usage)?;
            let mode: CompositionMode = mode.parse().map_err(usage)?;
            let params = NetworkParams::from_text(&read(&checkpoint)?).map_err(runtime)?;
            let vocab = vocab_for(params.cfg.lig_classes)?;
            let p1 = load_pocket(&p1)?;
            let p2 = load_pocket(&p2)?;
            let prober_list = load_probers(&probers, criterion, &p1.vocab)?;
            let schedule = schedule_from(&cfg)?;
            let opts = ComposeOptions {
                mode,
                eta: cfg.eta,
                ..Default::default()
            };
            out_dir(&out)?;
            let mut transform_record = None;
            for i in 0..n {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(i as u64));
                let count = atom_count(n_atoms, &cfg, &mut rng);
                let mut noise = RngNoise::new(rng);
                let name = format!("mol_{i:03}");
                let result = sample_dual(
                    &params,
                    &p1,
                    &p2,
                    &prober_list,
                    criterion,
                    &vocab,
                    count,
                    &schedule,
                    cfg.k_neighbors,
                    &opts,
                    &mut noise,
                    &name,
                )
                .map_err(runtime)?;
                write(
                    &out.join(format!("{name}.txt")),
                    &serialize_structure(&Structure::Molecule(result.molecule)),
                )?;
                transform_record =
                    Some(format_transform(&result.transform, result.prober_id.as_deref()));
            }
            if let Some(record) = transform_record {
                write(&out.join("transform.txt"), &record)?;
            }
            Ok(())
        }
        Cmd::Align {
            p1,
            p2,
            probers,
            criterion,
            out,
        } => {
            let criterion: AlignmentCriterion = criterion.parse().map_err(usage)?;
            let p1 = load_pocket(&p1)?;
            let p2 = load_pocket(&p2)?;
            let prober_list = load_probers(&probers, criterion, &p1.vocab)?;
            let (tr, id) =
                choose_alignment(&p1, &p2, &prober_list, criterion).map_err(runtime)?;
            write(&out, &format_transform(&tr, id.as_deref()))
        }
        Cmd::Synergy { table, out } => {
            let records = parse_combination_table(&read(&table)?).map_err(runtime)?;
            let pairs = evaluate_table(&records).map_err(runtime)?;
            write(&out, &manifest(&pairs))
        }
        Cmd::Fragment {
            molecule,
            mol2,
            p1,
            p2,
            mode,
            out,
        } => {
            let mode: SelectionMode = mode.parse().map_err(usage)?;
            let m1 = infer_bonds(&load_molecule(&molecule)?);
            let frags1 = fragment_molecule(&m1).map_err(runtime)?;
            out_dir(&out)?;
            let frag_mol = |m: &Molecule, idx: usize, frag: &crate::chem::Fragment| Molecule {
                vocab: m.vocab.clone(),
                name: format!("{}_frag{idx}", m.name),
                atoms: frag.atoms.clone(),
                bonds: None,
            };
            for (i, f) in frags1.iter().enumerate() {
                let fm = infer_bonds(&frag_mol(&m1, i, f));
                write(
                    &out.join(format!("frag1_{i:02}.txt")),
                    &serialize_structure(&Structure::Molecule(fm)),
                )?;
            }
            let (Some(mol2), Some(p1), Some(p2)) = (mol2, p1, p2) else {
                return Ok(());
            };
            let m2 = infer_bonds(&load_molecule(&mol2)?);
            let frags2 = fragment_molecule(&m2).map_err(runtime)?;
            for (i, f) in frags2.iter().enumerate() {
                let fm = infer_bonds(&frag_mol(&m2, i, f));
                write(
                    &out.join(format!("frag2_{i:02}.txt")),
                    &serialize_structure(&Structure::Molecule(fm)),
                )?;
            }
            let p1 = load_pocket(&p1)?;
            let p2 = load_pocket(&p2)?;
            let scorer = MockScorer::default();
            let scored = |m: &Molecule, frags: &[crate::chem::Fragment], p: &Pocket| {
                frags
                    .iter()
                    .enumerate()
                    .map(|(i, f)| ScoredFragment {
                        fragment: f.clone(),
                        score: scorer.score(&frag_mol(m, i, f), p),
                    })
                    .collect::<Vec<_>>()
            };
            let s1 = scored(&m1, &frags1, &p1);
            let s2 = scored(&m2, &frags2, &p2);
            let (i, j) = select_fragment_pair(&s1, &s2, mode).map_err(runtime)?;
            write(
                &out.join("selected_pair.txt"),
                &format!(
                    "frag1 {i} score {}\nfrag2 {j} score {}\n",
                    s1[i].score, s2[j].score
                ),
            )
        }
        Cmd::Evaluate {
            mols,
            p1,
            p2,
            ref1,
            ref2,
            out,
        } => {
            let p1 = load_pocket(&p1)?;
            let p2 = load_pocket(&p2)?;
            let ref1 = load_molecule(&ref1)?;
            let ref2 = load_molecule(&ref2)?;
            let mut paths: Vec<PathBuf> = std::fs::read_dir(&mols)
                .map_err(|e| runtime(format!("{}: {e}", mols.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().map_or(false, |x| x == "txt"))
                .filter(|p| p.file_name().map_or(false, |n| n != "transform.txt"))
                .collect();
            paths.sort();
            let molecules: Vec<Molecule> = paths
                .iter()
                .map(|p| load_molecule(p))
                .collect::<CliResult<_>>()?;
            let report = evaluate(&molecules, &p1, &p2, &ref1, &ref2, &MockScorer::default())
                .map_err(runtime)?;
            write(&out, &format_report(&report))
        }
    }
}

/// Parses argv and runs a subcommand. Exit codes: 0 success, 1 usage,
/// 2 runtime failure.
pub fn cli_dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            1
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            2
        }
    }
}
