//! Batch commands wiring the modules together: corpus simulation, mixing,
//! preprocessing, the two training stages, decomposition, retrieval index
//! checks, evaluation, and an end-to-end smoke run.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autograd::Tape;
use crate::config::RunConfig;
use crate::data::{
    make_mixture, resample_to_grid, snip_background, split_by_crystal, MixtureSample,
    ReferenceLibrary, SnipSchedule,
};
use crate::eval::{evaluate_run, EvalReport, RetrievalIndex};
use crate::model::{decompose_forward, Model};
use crate::pattern::DiffractionPattern;
use crate::sim::render_pattern;
use crate::train::{run_stage1, run_stage2, TrainError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<PipelineError>,
    },
    #[error("no structures parsed from {0}")]
    NoStructures(PathBuf),
    #[error("input length {got} does not match the model grid ({want})")]
    IncompatibleGrid { got: usize, want: usize },
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error(transparent)]
    Crystal(#[from] crate::crystal::CrystalError),
    #[error(transparent)]
    Sim(#[from] crate::sim::SimError),
    #[error(transparent)]
    Dataset(#[from] crate::data::DataError),
    #[error(transparent)]
    Pattern(#[from] crate::pattern::PatternError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] crate::eval::EvalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl PipelineError {
    fn at(self, stage: &'static str) -> Self {
        PipelineError::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// CLI exit code: 2 for data problems, 3 for internal errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Stage { source, .. } => source.exit_code(),
            PipelineError::Io(_) | PipelineError::Train(_) => 3,
            _ => 2,
        }
    }
}

fn fnv64(text: &str) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for b in text.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// List files with the given extension, sorted; a missing or unreadable
/// directory is a data error, not an internal one.
fn list_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>, PipelineError> {
    let entries = fs::read_dir(dir)
        .map_err(|e| PipelineError::Data(format!("cannot read {}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|x| x == ext).unwrap_or(false))
        .collect();
    files.sort();
    Ok(files)
}

fn read_input(path: &Path) -> Result<String, PipelineError> {
    fs::read_to_string(path)
        .map_err(|e| PipelineError::Data(format!("cannot read {}: {e}", path.display())))
}

/// Write the resolved config snapshot into a run directory.
fn write_snapshot(cfg: &RunConfig, out_dir: &Path) -> Result<(), PipelineError> {
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("resolved_config.txt"), cfg.to_text())?;
    Ok(())
}

/// Outcome counts of a corpus simulation run.
#[derive(Debug)]
pub struct SimulateSummary {
    pub structures: usize,
    pub patterns: usize,
    pub failures: Vec<(String, String)>,
}

/// Render `n_per_crystal` patterns per parseable CIF into a reference
/// library; unparseable files are listed in `failures.txt` and skipped.
pub fn cmd_simulate(
    cfg: &RunConfig,
    cif_dir: &Path,
    out_dir: &Path,
) -> Result<SimulateSummary, PipelineError> {
    write_snapshot(cfg, out_dir)?;
    let files = list_files(cif_dir, "cif")?;

    let mut entries = Vec::new();
    let mut failures = Vec::new();
    let mut structures = 0usize;
    for file in &files {
        let name = file.file_name().unwrap_or_default().to_string_lossy().to_string();
        let text = read_input(file)?;
        let structure = match crate::crystal::parse_structure(&text) {
            Ok(s) => s,
            Err(e) => {
                failures.push((name, e.to_string()));
                continue;
            }
        };
        // per-structure stream: rendering is independent of directory order
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ fnv64(&structure.id));
        let mut rendered = Vec::new();
        for j in 0..cfg.sim.n_per_crystal {
            let render_cfg = cfg.sim.sample(&mut rng);
            match render_pattern(&structure, &render_cfg) {
                Ok((pattern, _)) => rendered.push((format!("{}:{j:02}", structure.id), pattern)),
                Err(e) => failures.push((format!("{}:{j:02}", structure.id), e.to_string())),
            }
        }
        if !rendered.is_empty() {
            structures += 1;
            entries.extend(rendered);
        }
    }
    if structures == 0 {
        return Err(PipelineError::NoStructures(cif_dir.to_path_buf()));
    }
    let patterns = entries.len();
    let library = ReferenceLibrary::new(entries)?;
    library.save(&out_dir.join("library"))?;
    let mut failure_text = String::new();
    for (name, reason) in &failures {
        let _ = writeln!(failure_text, "{name}\t{reason}");
    }
    fs::write(out_dir.join("failures.txt"), failure_text)?;
    Ok(SimulateSummary {
        structures,
        patterns,
        failures,
    })
}

/// Preprocess two-column experimental patterns: resample to the scan grid,
/// subtract an iterative-clipping background estimate, renormalize.
pub fn cmd_prep(cfg: &RunConfig, in_dir: &Path, out_dir: &Path) -> Result<usize, PipelineError> {
    write_snapshot(cfg, out_dir)?;
    let grid = cfg.sim.base.grid();
    let files = list_files(in_dir, "xy")?;
    let mut entries = Vec::new();
    for file in &files {
        let raw = DiffractionPattern::read_xy(file)?;
        let mut pattern = resample_to_grid(&raw, grid)?;
        let background =
            snip_background(&pattern, cfg.data.snip_iterations, SnipSchedule::Increasing)?;
        for (v, b) in pattern.intensities.iter_mut().zip(&background) {
            *v = (*v - b).max(0.0);
        }
        pattern.normalize_max();
        let id = file
            .file_stem()
            .unwrap_or_default()
            .to_string_lossy()
            .to_string();
        entries.push((id, pattern));
    }
    if entries.is_empty() {
        return Err(PipelineError::Data(format!(
            "no .xy patterns in {}",
            in_dir.display()
        )));
    }
    let n = entries.len();
    ReferenceLibrary::new(entries)?.save(&out_dir.join("library"))?;
    Ok(n)
}

/// Synthesize and persist `count` mixtures from a library directory.
pub fn cmd_mix(
    cfg: &RunConfig,
    library_dir: &Path,
    out_dir: &Path,
    count: usize,
) -> Result<usize, PipelineError> {
    write_snapshot(cfg, out_dir)?;
    let library = ReferenceLibrary::load(&library_dir.join("library"))?;
    let ids: Vec<String> = library.ids().map(str::to_string).collect();
    for i in 0..count {
        let mut rng = crate::data::sample_stream(0, i as u64, cfg.seed);
        let anchor = &ids[i % ids.len()];
        let sample = make_mixture(&library, anchor, &mut rng, &cfg.data.mix)?;
        save_mixture(&sample, &out_dir.join(format!("mix_{i:04}")))?;
    }
    Ok(count)
}

fn save_mixture(sample: &MixtureSample, dir: &Path) -> Result<(), PipelineError> {
    fs::create_dir_all(dir)?;
    sample.mixed.write_binary(&dir.join("mixed.xdp"))?;
    for (k, comp) in sample.components.iter().enumerate() {
        comp.write_binary(&dir.join(format!("comp_{k}.xdp")))?;
    }
    let mut meta = String::new();
    let _ = writeln!(meta, "active_count = {}", sample.active_count);
    let _ = writeln!(meta, "noise_sigma = {}", sample.noise_sigma);
    let _ = writeln!(meta, "seed = {}", sample.seed);
    for (i, (id, w)) in sample.component_ids.iter().zip(&sample.weights).enumerate() {
        let _ = writeln!(meta, "id_{i} = {id}");
        let _ = writeln!(meta, "weight_{i} = {w}");
    }
    fs::write(dir.join("meta.txt"), meta)?;
    Ok(())
}

/// Load all `mix_*` sample directories under `dir`, in name order.
pub fn load_mixtures(dir: &Path) -> Result<Vec<MixtureSample>, PipelineError> {
    let entries = fs::read_dir(dir)
        .map_err(|e| PipelineError::Data(format!("cannot read {}: {e}", dir.display())))?;
    let mut sample_dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_dir()
                && p.file_name()
                    .map(|n| n.to_string_lossy().starts_with("mix_"))
                    .unwrap_or(false)
        })
        .collect();
    sample_dirs.sort();
    let mut samples = Vec::new();
    for sd in &sample_dirs {
        let mixed = DiffractionPattern::read_binary(&sd.join("mixed.xdp"))?;
        let meta = fs::read_to_string(sd.join("meta.txt"))?;
        let mut fields: BTreeMap<String, String> = BTreeMap::new();
        for line in meta.lines() {
            if let Some((k, v)) = line.split_once('=') {
                fields.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        let get = |k: &str| -> Result<&String, PipelineError> {
            fields
                .get(k)
                .ok_or_else(|| PipelineError::Data(format!("{}: missing '{k}'", sd.display())))
        };
        let active_count: usize = get("active_count")?
            .parse()
            .map_err(|_| PipelineError::Data("bad active_count".into()))?;
        let mut components = Vec::new();
        for k in 0.. {
            let path = sd.join(format!("comp_{k}.xdp"));
            if !path.exists() {
                break;
            }
            components.push(DiffractionPattern::read_binary(&path)?);
        }
        if components.len() < active_count {
            return Err(PipelineError::Data(format!(
                "{}: {} components for active_count {active_count}",
                sd.display(),
                components.len()
            )));
        }
        let mut component_ids = Vec::new();
        let mut weights = Vec::new();
        for i in 0..active_count {
            component_ids.push(get(&format!("id_{i}"))?.clone());
            weights.push(
                get(&format!("weight_{i}"))?
                    .parse()
                    .map_err(|_| PipelineError::Data("bad weight".into()))?,
            );
        }
        samples.push(MixtureSample {
            mixed,
            components,
            weights,
            active_count,
            component_ids,
            noise_sigma: get("noise_sigma")?
                .parse()
                .map_err(|_| PipelineError::Data("bad noise_sigma".into()))?,
            seed: get("seed")?
                .parse()
                .map_err(|_| PipelineError::Data("bad seed".into()))?,
        });
    }
    Ok(samples)
}

/// Crystal id behind a library entry id of the form `crystal:render`.
fn crystal_of(entry_id: &str) -> &str {
    entry_id.split(':').next().unwrap_or(entry_id)
}

fn split_patterns(
    library: &ReferenceLibrary,
    cfg: &RunConfig,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<String>), PipelineError> {
    let mut crystals: Vec<String> = Vec::new();
    for id in library.ids() {
        let c = crystal_of(id).to_string();
        if !crystals.contains(&c) {
            crystals.push(c);
        }
    }
    let manifest = split_by_crystal(&crystals, cfg.data.ratios, cfg.seed)?;
    let collect = |names: &[String]| -> Vec<Vec<f64>> {
        library
            .ids()
            .filter(|id| names.iter().any(|n| n == crystal_of(id)))
            .filter_map(|id| library.get(id).map(|p| p.intensities.clone()))
            .collect()
    };
    let train = collect(&manifest.train);
    let val = collect(&manifest.val);
    let test_ids: Vec<String> = library
        .ids()
        .filter(|id| manifest.test.iter().any(|n| n == crystal_of(id)))
        .map(str::to_string)
        .collect();
    Ok((train, val, test_ids))
}

/// Stage I pretraining over the train/val crystal split of a library.
pub fn cmd_pretrain(
    cfg: &RunConfig,
    library_dir: &Path,
    out_dir: &Path,
) -> Result<PathBuf, PipelineError> {
    write_snapshot(cfg, out_dir)?;
    let library = ReferenceLibrary::load(&library_dir.join("library"))?;
    check_grid(cfg, library.grid().len)?;
    let (train, val, _) = split_patterns(&library, cfg)?;
    let mut model = Model::init(cfg.model.clone(), cfg.seed)?;
    let mut s1 = cfg.stage1.clone();
    s1.seed = cfg.seed;
    let mut log = fs::File::create(out_dir.join("stage1.log"))?;
    run_stage1(&mut model, &train, &val, &s1, &cfg.loss, Some(&mut log))?;
    let path = out_dir.join("stage1.xdck");
    model.save(&path, None)?;
    Ok(path)
}

/// Stage II decomposition training on online mixtures, starting from a
/// Stage I checkpoint.
pub fn cmd_train(
    cfg: &RunConfig,
    library_dir: &Path,
    stage1_ckpt: &Path,
    out_dir: &Path,
) -> Result<PathBuf, PipelineError> {
    write_snapshot(cfg, out_dir)?;
    let library = ReferenceLibrary::load(&library_dir.join("library"))?;
    check_grid(cfg, library.grid().len)?;
    let (mut model, _) = Model::load(stage1_ckpt)?;
    if model.cfg != cfg.model {
        return Err(crate::model::ModelError::IncompatibleCheckpoint(
            "checkpoint config differs from the run config".into(),
        )
        .into());
    }
    let train_lib = {
        // train-split entries only, at the crystal level
        let mut crystals: Vec<String> = Vec::new();
        for id in library.ids() {
            let c = crystal_of(id).to_string();
            if !crystals.contains(&c) {
                crystals.push(c);
            }
        }
        let manifest = split_by_crystal(&crystals, cfg.data.ratios, cfg.seed)?;
        let ids: Vec<String> = library
            .ids()
            .filter(|id| manifest.train.iter().any(|n| n == crystal_of(id)))
            .map(str::to_string)
            .collect();
        library.subset(&ids)?
    };
    if train_lib.len() < crate::data::K_MAX {
        return Err(PipelineError::Data(format!(
            "train split has {} patterns; mixing needs at least {}",
            train_lib.len(),
            crate::data::K_MAX
        )));
    }
    let ids: Vec<String> = train_lib.ids().map(str::to_string).collect();
    let seed = cfg.seed;
    let mix_cfg = cfg.data.mix.clone();
    let per_epoch = cfg.data.mixtures_per_epoch;
    let sampler = |epoch: usize| -> Result<Vec<MixtureSample>, TrainError> {
        (0..per_epoch)
            .map(|i| {
                let mut rng = crate::data::sample_stream(epoch as u64 + 1, i as u64, seed);
                let anchor = &ids[(epoch * per_epoch + i) % ids.len()];
                make_mixture(&train_lib, anchor, &mut rng, &mix_cfg).map_err(TrainError::from)
            })
            .collect()
    };
    let mut s2 = cfg.stage2.clone();
    s2.seed = cfg.seed;
    let mut log = fs::File::create(out_dir.join("stage2.log"))?;
    let out = run_stage2(&mut model, sampler, &s2, &cfg.loss, Some(&mut log))?;
    let path = out_dir.join("stage2.xdck");
    model.save(&path, Some(&out.ema))?;
    Ok(path)
}

fn check_grid(cfg: &RunConfig, len: usize) -> Result<(), PipelineError> {
    if len != cfg.model.l {
        return Err(PipelineError::IncompatibleGrid {
            got: len,
            want: cfg.model.l,
        });
    }
    Ok(())
}

/// Load a checkpoint for inference; EMA weights are preferred when stored.
pub fn load_inference_model(ckpt: &Path, use_ema: bool) -> Result<Model, PipelineError> {
    let (mut model, ema) = Model::load(ckpt)?;
    if use_ema {
        if let Some(ema) = ema {
            model.params = ema;
        }
    }
    Ok(model)
}

/// One decomposition: predicted component rows for an input pattern.
pub fn decompose_pattern(
    model: &Model,
    intensities: &[f64],
) -> Result<crate::model::DecompositionResult, PipelineError> {
    if intensities.len() != model.cfg.l {
        return Err(PipelineError::IncompatibleGrid {
            got: intensities.len(),
            want: model.cfg.l,
        });
    }
    let mut tape = Tape::new();
    let binding = model.bind(&mut tape, &[]);
    let fwd = decompose_forward(&mut tape, &binding, &model.cfg, intensities)?;
    Ok(fwd.result(&tape, &model.cfg))
}

/// Decompose every pattern file in `input` (file or directory); writes
/// per-slot components, activities, and the reconstruction per input.
pub fn cmd_decompose(
    ckpt: &Path,
    input: &Path,
    out_dir: &Path,
    tau: Option<f64>,
    use_ema: bool,
) -> Result<Vec<String>, PipelineError> {
    let mut model = load_inference_model(ckpt, use_ema)?;
    if let Some(tau) = tau {
        model.cfg.tau = tau;
    }
    fs::create_dir_all(out_dir)?;
    let mut files: Vec<PathBuf> = if input.is_dir() {
        fs::read_dir(input)
            .map_err(|e| PipelineError::Data(format!("cannot read {}: {e}", input.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .map(|x| x == "xy" || x == "xdp")
                    .unwrap_or(false)
            })
            .collect()
    } else {
        vec![input.to_path_buf()]
    };
    files.sort();
    let mut summaries = Vec::new();
    for file in &files {
        let pattern = read_any_pattern(file)?;
        let result = decompose_pattern(&model, &pattern.intensities)?;
        let stem = file.file_stem().unwrap_or_default().to_string_lossy();
        let dir = out_dir.join(stem.as_ref());
        fs::create_dir_all(&dir)?;
        for (k, comp) in result.components.iter().enumerate() {
            DiffractionPattern::new(pattern.grid, comp.clone())?
                .write_text(&dir.join(format!("comp_{k}.xy")))?;
        }
        DiffractionPattern::new(pattern.grid, result.reconstruction.clone())?
            .write_text(&dir.join("reconstruction.xy"))?;
        let mut act = String::new();
        for (k, p) in result.activities.iter().enumerate() {
            let _ = writeln!(act, "p_{k} = {p:.6}");
        }
        let _ = writeln!(
            act,
            "active_set = {}",
            result
                .active_set
                .iter()
                .map(|k| k.to_string())
                .collect::<Vec<_>>()
                .join(",")
        );
        fs::write(dir.join("activities.txt"), act)?;
        summaries.push(format!(
            "{stem}: {} active slots {:?}",
            result.active_set.len(),
            result.active_set
        ));
    }
    Ok(summaries)
}

fn read_any_pattern(path: &Path) -> Result<DiffractionPattern, PipelineError> {
    if path.extension().map(|x| x == "xdp").unwrap_or(false) {
        Ok(DiffractionPattern::read_binary(path)?)
    } else {
        let raw = DiffractionPattern::read_xy(path)?;
        if raw.len() < 2 {
            return Err(PipelineError::Data(format!(
                "{}: need at least two points",
                path.display()
            )));
        }
        let step = raw[1].0 - raw[0].0;
        let grid = crate::pattern::Grid::new(raw[0].0, step, raw.len());
        Ok(DiffractionPattern::new(
            grid,
            raw.iter().map(|&(_, v)| v).collect(),
        )?)
    }
}

/// Build and sanity-check the retrieval index; writes the id list.
pub fn cmd_index(cfg: &RunConfig, library_dir: &Path, out_dir: &Path) -> Result<usize, PipelineError> {
    write_snapshot(cfg, out_dir)?;
    let library = ReferenceLibrary::load(&library_dir.join("library"))?;
    let index = RetrievalIndex::build(&library, cfg.eval.candidates)?;
    let ids: Vec<String> = library.ids().map(str::to_string).collect();
    fs::write(out_dir.join("index_ids.txt"), ids.join("\n") + "\n")?;
    Ok(index.len())
}

/// Decompose stored mixtures with a trained checkpoint and score the run.
pub fn cmd_evaluate(
    cfg: &RunConfig,
    ckpt: &Path,
    mixtures_dir: &Path,
    library_dir: &Path,
    out_dir: &Path,
) -> Result<EvalReport, PipelineError> {
    write_snapshot(cfg, out_dir)?;
    let samples = load_mixtures(mixtures_dir)?;
    if samples.is_empty() {
        return Err(PipelineError::Data(format!(
            "no mixtures under {}",
            mixtures_dir.display()
        )));
    }
    let library = ReferenceLibrary::load(&library_dir.join("library"))?;
    let index = RetrievalIndex::build(&library, cfg.eval.candidates)?;
    let model = load_inference_model(ckpt, true)?;
    let mut predictions = Vec::with_capacity(samples.len());
    for sample in &samples {
        let result = decompose_pattern(&model, &sample.mixed.intensities)?;
        predictions.push(result.components);
    }
    let report = evaluate_run(
        &samples,
        &predictions,
        Some(&index),
        &cfg.loss,
        Some(&out_dir.join("plots")),
    )?;
    fs::write(out_dir.join("report.txt"), report.to_table())?;
    fs::write(out_dir.join("report.kv"), report.to_kv())?;
    Ok(report)
}

/// Built-in tiny corpus for the smoke pipeline: simple cubic single-element
/// cells with lattice constants that place peaks inside the toy scan window.
const SMOKE_CIFS: &[(&str, &str, f64)] = &[
    ("smoke_na", "Na", 5.2),
    ("smoke_mg", "Mg", 5.8),
    ("smoke_al", "Al", 6.4),
    ("smoke_si", "Si", 7.0),
    ("smoke_k", "K", 7.6),
    ("smoke_ca", "Ca", 8.2),
];

fn smoke_cif(id: &str, element: &str, a: f64) -> String {
    format!(
        "data_{id}\n\
         _cell_length_a {a}\n\
         _cell_length_b {a}\n\
         _cell_length_c {a}\n\
         _cell_angle_alpha 90\n\
         _cell_angle_beta 90\n\
         _cell_angle_gamma 90\n\
         loop_\n\
         _atom_site_type_symbol\n\
         _atom_site_fract_x\n\
         _atom_site_fract_y\n\
         _atom_site_fract_z\n\
         {element} 0.0 0.0 0.0\n"
    )
}

/// Configuration used by the smoke run: toy scale, few epochs, tiny corpus.
pub fn smoke_config(seed: u64) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.seed = seed;
    cfg.sim.n_per_crystal = 2;
    cfg.data.ratios = [0.67, 0.17, 0.16]; // 4/1/1 over six crystals
    cfg.data.mixtures_per_epoch = 8;
    cfg.stage1.epochs = 2;
    cfg.stage1.warmup_epochs = 1;
    cfg.stage1.batch_size = 4;
    cfg.stage2.epochs = 2;
    cfg.stage2.warmup_epochs = 1;
    cfg.stage2.batch_size = 4;
    cfg.eval.n_mixtures = 4;
    cfg.eval.candidates = 8;
    cfg
}

/// End-to-end pipeline at toy scale: simulate, mix, pretrain, train,
/// decompose, evaluate. Returns the final report; errors name the failing
/// stage.
pub fn cmd_smoke(seed: u64, out_dir: &Path) -> Result<EvalReport, PipelineError> {
    let cfg = smoke_config(seed);
    fs::create_dir_all(out_dir)?;
    let cif_dir = out_dir.join("cifs");
    fs::create_dir_all(&cif_dir)?;
    for (id, element, a) in SMOKE_CIFS {
        fs::write(cif_dir.join(format!("{id}.cif")), smoke_cif(id, element, *a))?;
    }
    let sim_dir = out_dir.join("simulate");
    cmd_simulate(&cfg, &cif_dir, &sim_dir).map_err(|e| e.at("simulate"))?;
    let mix_dir = out_dir.join("mix");
    cmd_mix(&cfg, &sim_dir, &mix_dir, cfg.eval.n_mixtures).map_err(|e| e.at("mix"))?;
    let pre_dir = out_dir.join("pretrain");
    let stage1 = cmd_pretrain(&cfg, &sim_dir, &pre_dir).map_err(|e| e.at("pretrain"))?;
    let train_dir = out_dir.join("train");
    let stage2 = cmd_train(&cfg, &sim_dir, &stage1, &train_dir).map_err(|e| e.at("train"))?;
    let dec_dir = out_dir.join("decompose");
    let first_mix = mix_dir.join("mix_0000").join("mixed.xdp");
    cmd_decompose(&stage2, &first_mix, &dec_dir, None, true).map_err(|e| e.at("decompose"))?;
    let eval_dir = out_dir.join("evaluate");
    cmd_evaluate(&cfg, &stage2, &mix_dir, &sim_dir, &eval_dir).map_err(|e| e.at("evaluate"))
}
