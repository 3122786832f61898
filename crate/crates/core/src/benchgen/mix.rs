//! Synthetic pool construction and class-balanced mixing.

use std::path::{Path, PathBuf};

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::benchgen::generator::{GenerationRequest, GeneratorAdapter, ProceduralConfig};
use crate::benchgen::prompts::{build_prompt_set, TemplateSource};
use crate::benchgen::toy::CLASSES_FILE;
use crate::error::{Error, IoContext, Result};
use crate::exec;
use crate::fileio::write_atomic;
use crate::imaging::Image;
use crate::manifest::{read_records, split_record, write_jsonl, ManifestRecord, Origin, Split, MANIFEST_FILE, SIDECAR_FILE};
use crate::rng::{stream, substream, Stream};

pub const META_FILE: &str = "meta.json";
/// Keeps pool sub-streams apart from other users of the same seed.
const POOL_STREAM_OFFSET: u64 = 1 << 40;

/// `ceil(alpha * n)`, ignoring floating-point error below 1e-9 so that
/// e.g. `0.3 * 10` gives 3.
pub fn synthetic_count(alpha: f64, n: usize) -> usize {
    let x = alpha * n as f64;
    (x - 1e-9 * x.max(1.0)).ceil().max(0.0) as usize
}

/// Sizes that drive pool synthesis and mixing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixPlan {
    /// Real images per class (N).
    pub real_per_class: usize,
    pub alpha: f64,
    /// Prompts per class (M).
    pub prompts_per_class: usize,
    pub labeled_per_class: usize,
    pub roster: Vec<String>,
}

impl MixPlan {
    pub fn validate(&self) -> Result<()> {
        if self.real_per_class == 0 || self.prompts_per_class == 0 || self.labeled_per_class == 0 {
            return Err(Error::Precondition("N, M and labeled_per_class must be positive".into()));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Precondition(format!("alpha = {} must be finite and >= 0", self.alpha)));
        }
        if self.roster.is_empty() {
            return Err(Error::Precondition("generator roster is empty".into()));
        }
        Ok(())
    }

    pub fn synthetic_per_class(&self) -> usize {
        synthetic_count(self.alpha, self.real_per_class)
    }

    /// Images per (generator, prompt) when pre-building a pool of N per class.
    pub fn per_prompt_count(&self) -> usize {
        self.real_per_class.div_ceil(self.prompts_per_class * self.roster.len())
    }

    /// Images each generator keeps per class: equal shares of N, remainder
    /// to the first roster entries.
    pub fn generator_shares(&self) -> Vec<usize> {
        let g = self.roster.len();
        (0..g)
            .map(|i| self.real_per_class / g + usize::from(i < self.real_per_class % g))
            .collect()
    }
}

/// A synthetic image and its (unsplit) record.
#[derive(Clone, Debug)]
pub struct PoolEntry {
    pub record: ManifestRecord,
    pub image: Image,
}

/// Generate `N` synthetic images per class for `prompts[class]`. Each
/// (class, generator, prompt) job draws from its own sub-stream of `seed`.
/// Output images are resized (bilinear) to `height x width`.
pub fn synthesize_pool(
    plan: &MixPlan,
    class_names: &[String],
    prompts: &[Vec<String>],
    adapters: &[&dyn GeneratorAdapter],
    seed: u64,
    height: usize,
    width: usize,
) -> Result<Vec<PoolEntry>> {
    let all: Vec<usize> = (0..class_names.len()).collect();
    synthesize_classes(plan, &all, class_names, prompts, adapters, seed, height, width)
}

/// [`synthesize_pool`] for a subset of classes. A class's images do not
/// depend on which other classes are generated.
#[allow(clippy::too_many_arguments)]
pub fn synthesize_classes(
    plan: &MixPlan,
    classes: &[usize],
    class_names: &[String],
    prompts: &[Vec<String>],
    adapters: &[&dyn GeneratorAdapter],
    seed: u64,
    height: usize,
    width: usize,
) -> Result<Vec<PoolEntry>> {
    if adapters.is_empty() {
        return Err(Error::Precondition("no generator adapters".into()));
    }
    plan.validate()?;
    let k = class_names.len();
    if prompts.len() != k || classes.iter().any(|&c| c >= k || prompts[c].len() < plan.prompts_per_class) {
        return Err(Error::Precondition("prompt set does not cover every class".into()));
    }
    if adapters.len() != plan.roster.len() {
        return Err(Error::Precondition("adapters do not match the roster".into()));
    }
    let m = plan.prompts_per_class;
    let g = adapters.len();
    let per_prompt = plan.per_prompt_count();
    let shares = plan.generator_shares();
    // Only jobs whose output survives truncation are run; truncation keeps
    // each generator's images in prompt order.
    let jobs: Vec<(usize, usize, usize)> = classes
        .iter()
        .copied()
        .flat_map(|c| (0..g).flat_map(move |a| (0..m).map(move |p| (c, a, p))))
        .filter(|&(_, a, p)| p * per_prompt < shares[a])
        .collect();
    let results = exec::map_slice(&jobs, |&(c, a, p)| {
        let adapter = adapters[a];
        let prompt = &prompts[c][p];
        let req = GenerationRequest {
            class_index: c,
            num_classes: k,
            class_name: &class_names[c],
            prompt,
        };
        let job = ((c * g + a) * m + p) as u64;
        let mut rng = substream(seed, Stream::Bench, POOL_STREAM_OFFSET + job);
        let images = adapter.generate(&req, per_prompt, &mut rng).map_err(|e| match e {
            e @ Error::Generator { .. } => e,
            other => Error::Generator {
                generator: adapter.name().to_string(),
                prompt: prompt.clone(),
                message: other.to_string(),
            },
        })?;
        if images.len() != per_prompt {
            return Err(Error::Generator {
                generator: adapter.name().to_string(),
                prompt: prompt.clone(),
                message: format!("returned {} images, expected {per_prompt}", images.len()),
            });
        }
        let keep = per_prompt.min(shares[a] - p * per_prompt);
        Ok(images
            .into_iter()
            .take(keep)
            .enumerate()
            .map(|(i, img)| {
                let id = format!("syn-{c}-{a}-{p:04}-{i:03}");
                let image = if (img.height, img.width) == (height, width) {
                    img.quantized()
                } else {
                    img.resize(height, width).quantized()
                };
                PoolEntry {
                    record: ManifestRecord {
                        path: format!("images/synthetic/{id}.png"),
                        id,
                        split: Split::Unlabeled,
                        label: Some(c),
                        origin: Some(Origin::Synthetic),
                        generator: Some(adapter.name().to_string()),
                    },
                    image,
                }
            })
            .collect::<Vec<_>>())
    });
    let mut pool = Vec::new();
    for r in results {
        pool.extend(r?);
    }
    Ok(pool)
}

/// Per-class counts of a mixed benchmark.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub class: usize,
    pub real: usize,
    pub labeled: usize,
    pub unlabeled_real: usize,
    pub synthetic: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixMeta {
    pub alpha: f64,
    pub labeled_per_class: usize,
    pub seed: u64,
    pub classes: Vec<ClassCounts>,
    /// Set when some class needed more synthetic images than its pool held
    /// (only allowed for alpha > 1).
    pub synthetic_with_replacement: bool,
}

/// Full records (origins included) in manifest order, plus counts.
#[derive(Clone, Debug, PartialEq)]
pub struct MixedBenchmark {
    pub records: Vec<ManifestRecord>,
    pub meta: MixMeta,
}

/// Split real training records into labeled and unlabeled parts per class and
/// add `ceil(alpha * N_c)` pool images of each class to the unlabeled part.
/// Records with `split = test` pass through unchanged.
pub fn mix_benchmark(real: &[ManifestRecord], pool: &[ManifestRecord], alpha: f64, labeled_per_class: usize, seed: u64) -> Result<MixedBenchmark> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::Precondition(format!("alpha = {alpha} must be finite and >= 0")));
    }
    let train: Vec<&ManifestRecord> = real.iter().filter(|r| r.split != Split::Test).collect();
    let mut k = 0;
    for r in &train {
        let label = r
            .label
            .ok_or_else(|| Error::Precondition(format!("real record `{}` has no label", r.id)))?;
        if r.origin == Some(Origin::Synthetic) {
            return Err(Error::Precondition(format!("real record `{}` is marked synthetic", r.id)));
        }
        k = k.max(label + 1);
    }
    let mut rng = stream(seed, Stream::Bench);
    let mut labeled = Vec::new();
    let mut unlabeled = Vec::new();
    let mut counts = Vec::with_capacity(k);
    let mut with_replacement = false;
    for c in 0..k {
        let mut reals: Vec<&ManifestRecord> = train.iter().copied().filter(|r| r.label == Some(c)).collect();
        let n = reals.len();
        if labeled_per_class == 0 || labeled_per_class >= n {
            return Err(Error::Precondition(format!(
                "class {c}: labeled_per_class = {labeled_per_class} must lie in [1, {n})"
            )));
        }
        reals.shuffle(&mut rng);
        for (i, r) in reals.iter().enumerate() {
            let split = if i < labeled_per_class { Split::Labeled } else { Split::Unlabeled };
            let rec = ManifestRecord {
                id: r.id.clone(),
                path: r.path.clone(),
                split,
                label: Some(c),
                origin: Some(Origin::Real),
                generator: None,
            };
            if split == Split::Labeled {
                labeled.push(rec);
            } else {
                unlabeled.push(rec);
            }
        }
        let candidates: Vec<&ManifestRecord> = pool.iter().filter(|r| r.label == Some(c)).collect();
        let s = synthetic_count(alpha, n);
        let picks: Vec<usize> = if s <= candidates.len() {
            index::sample(&mut rng, candidates.len(), s).into_vec()
        } else if alpha > 1.0 && !candidates.is_empty() {
            with_replacement = true;
            (0..s).map(|_| rng.random_range(0..candidates.len())).collect()
        } else {
            return Err(Error::Precondition(format!(
                "class {c}: {s} synthetic images requested but the pool holds {}",
                candidates.len()
            )));
        };
        let mut used = vec![0usize; candidates.len()];
        for i in picks {
            let src = candidates[i];
            let id = if used[i] == 0 {
                src.id.clone()
            } else {
                format!("{}~{}", src.id, used[i])
            };
            used[i] += 1;
            unlabeled.push(ManifestRecord {
                id,
                path: src.path.clone(),
                split: Split::Unlabeled,
                label: Some(c),
                origin: Some(Origin::Synthetic),
                generator: src.generator.clone(),
            });
        }
        counts.push(ClassCounts {
            class: c,
            real: n,
            labeled: labeled_per_class,
            unlabeled_real: n - labeled_per_class,
            synthetic: s,
        });
    }
    unlabeled.shuffle(&mut rng);
    let mut records = labeled;
    records.extend(unlabeled);
    records.extend(real.iter().filter(|r| r.split == Split::Test).cloned().map(|mut r| {
        r.origin = Some(Origin::Real);
        r
    }));
    Ok(MixedBenchmark {
        records,
        meta: MixMeta {
            alpha,
            labeled_per_class,
            seed,
            classes: counts,
            synthetic_with_replacement: with_replacement,
        },
    })
}

/// Inputs of the end-to-end benchmark build.
#[derive(Clone, Debug)]
pub struct BuildOptions {
    pub real_manifest: PathBuf,
    pub alpha: f64,
    pub labeled_per_class: usize,
    pub prompts_per_class: usize,
    pub seed: u64,
    pub procedural: ProceduralConfig,
    pub out: PathBuf,
}

/// Everything recorded in `meta.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkMeta {
    pub mix: MixMeta,
    pub class_names: Vec<String>,
    pub image_size: [usize; 2],
    pub prompts_per_class: usize,
    pub per_prompt_count: usize,
    pub roster: Vec<String>,
    pub generator: ProceduralConfig,
}

/// Class names from `classes.txt` beside the manifest, else `class<i>`.
pub fn read_class_names(manifest: &Path, k: usize) -> Result<Vec<String>> {
    let p = manifest.parent().unwrap_or(Path::new(".")).join(CLASSES_FILE);
    if p.exists() {
        let names: Vec<String> = std::fs::read_to_string(&p)
            .at(&p)?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect();
        if names.len() < k {
            return Err(Error::Precondition(format!("{} lists {} names for {k} classes", p.display(), names.len())));
        }
        return Ok(names[..k].to_vec());
    }
    Ok((0..k).map(|i| format!("class{i}")).collect())
}

/// Build a benchmark directory: copied real images, selected synthetic
/// images, `manifest.jsonl` (no origins), `sidecar.jsonl` and `meta.json`.
pub fn build_benchmark(opts: &BuildOptions) -> Result<BenchmarkMeta> {
    opts.procedural.validate()?;
    let real = read_records(&opts.real_manifest)?;
    let real_root = opts.real_manifest.parent().unwrap_or(Path::new(".")).to_path_buf();
    let train: Vec<&ManifestRecord> = real.iter().filter(|r| r.split != Split::Test).collect();
    let first = train
        .first()
        .ok_or_else(|| Error::Precondition("real manifest has no training records".into()))?;
    let k = train.iter().filter_map(|r| r.label).max().map_or(0, |m| m + 1);
    let class_names = read_class_names(&opts.real_manifest, k)?;
    let sample = Image::load_png(&real_root.join(&first.path))?;
    let (h, w) = (sample.height, sample.width);
    let prompts = build_prompt_set(&class_names, opts.prompts_per_class, &TemplateSource::standard())?;
    let gens = opts.procedural.generators(h, w);
    let adapters: Vec<&dyn GeneratorAdapter> = gens.iter().map(|g| g as &dyn GeneratorAdapter).collect();
    let roster: Vec<String> = gens.iter().map(|g| g.name().to_string()).collect();

    let mut pool = Vec::new();
    let mut per_prompt = 0;
    for c in 0..k {
        let n = train.iter().filter(|r| r.label == Some(c)).count();
        let plan = MixPlan {
            real_per_class: n.max(1),
            alpha: opts.alpha,
            prompts_per_class: opts.prompts_per_class,
            labeled_per_class: opts.labeled_per_class,
            roster: roster.clone(),
        };
        per_prompt = per_prompt.max(plan.per_prompt_count());
        let p = &prompts;
        pool.extend(synthesize_classes(&plan, &[c], &class_names, p, &adapters, opts.seed, h, w)?);
    }
    let pool_records: Vec<ManifestRecord> = pool.iter().map(|e| e.record.clone()).collect();
    let mixed = mix_benchmark(&real, &pool_records, opts.alpha, opts.labeled_per_class, opts.seed)?;

    // Unlabeled records get opaque names in shuffled order: ids and paths
    // must reveal neither origin, generator nor class.
    let out = &opts.out;
    std::fs::create_dir_all(out.join("images/real")).at(out)?;
    std::fs::create_dir_all(out.join("images/unlabeled")).at(out)?;
    let mut final_records = Vec::with_capacity(mixed.records.len());
    let by_id: std::collections::HashMap<&str, &PoolEntry> = pool.iter().map(|e| (e.record.id.as_str(), e)).collect();
    let mut written = std::collections::HashSet::new();
    let mut unlabeled = 0usize;
    for rec in &mixed.records {
        let mut rec = rec.clone();
        let synthetic = rec.origin == Some(Origin::Synthetic);
        let src = if synthetic { None } else { Some(real_root.join(&rec.path)) };
        if rec.split == Split::Unlabeled {
            let base = rec.id.split('~').next().unwrap_or(&rec.id).to_string();
            rec.id = format!("u{unlabeled:06}");
            rec.path = format!("images/unlabeled/{}.png", rec.id);
            unlabeled += 1;
            match &src {
                None => by_id[base.as_str()].image.save_png(&out.join(&rec.path))?,
                Some(src) => {
                    std::fs::copy(src, out.join(&rec.path)).at(out.join(&rec.path))?;
                }
            }
        } else {
            let src = src.ok_or_else(|| Error::Precondition(format!("labeled record `{}` is synthetic", rec.id)))?;
            let file = Path::new(&rec.path)
                .file_name()
                .ok_or_else(|| Error::Precondition(format!("record `{}` has no file name", rec.id)))?
                .to_string_lossy()
                .into_owned();
            rec.path = format!("images/real/{file}");
            if written.insert(rec.path.clone()) {
                std::fs::copy(&src, out.join(&rec.path)).at(out.join(&rec.path))?;
            }
        }
        final_records.push(rec);
    }
    let (visible, hidden): (Vec<_>, Vec<_>) = final_records.iter().map(split_record).unzip();
    write_jsonl(&out.join(MANIFEST_FILE), &visible)?;
    write_jsonl(&out.join(SIDECAR_FILE), &hidden)?;
    let meta = BenchmarkMeta {
        mix: mixed.meta,
        class_names,
        image_size: [h, w],
        prompts_per_class: opts.prompts_per_class,
        per_prompt_count: per_prompt,
        roster,
        generator: opts.procedural.clone(),
    };
    write_atomic(&out.join(META_FILE), &serde_json::to_vec_pretty(&meta)?)?;
    Ok(meta)
}
