use std::fs;
use std::path::{Path, PathBuf};

use normshare::data::{
    generate_synthetic_corpus, write_pairs, RuleSet, SyntheticOptions, TaskKind,
};
use normshare::evalkit::identity_baseline;
use serde::Serialize;

use crate::error::{io_error, CliError, Result};
use crate::results::write_atomic;
use crate::runner::RunOptions;
use crate::spec::ExperimentSpec;

#[derive(Debug, Serialize)]
struct DatasetEntry {
    name: String,
    language: String,
    train: PathBuf,
    dev: PathBuf,
}

#[derive(Debug, Serialize)]
struct AuxEntry {
    task: TaskKind,
    language: String,
    path: PathBuf,
}

#[derive(Debug, Serialize)]
struct GeneratedSpec {
    out: PathBuf,
    dataset: Vec<DatasetEntry>,
    auxiliary: Vec<AuxEntry>,
}

/// A generated normalization dataset and its dev identity baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedDataset {
    pub name: String,
    pub language: String,
    pub identity: f64,
}

/// Writes one directory per synthetic language (train/dev normalization
/// files, the three auxiliary files and the rules used) and a `spec.toml`
/// listing them, with paths relative to the output directory.
pub fn gen_synthetic(mut spec: ExperimentSpec, opts: &RunOptions) -> Result<Vec<GeneratedDataset>> {
    let out = opts.apply(&mut spec)?;
    let syn = spec
        .synthetic
        .clone()
        .ok_or_else(|| CliError::spec("gen-synthetic needs a [synthetic] section"))?;
    let mut problems = Vec::new();
    if syn.languages.is_empty() {
        problems.push("[synthetic] lists no languages".to_owned());
    }
    if syn.train_tokens == 0 || syn.dev_tokens == 0 {
        problems.push("synthetic train_tokens and dev_tokens must be positive".to_owned());
    }
    for l in &syn.languages {
        if l.norm_sets == 0 {
            problems.push(format!("language {} has norm_sets = 0", l.code));
        }
        if !(l.scale >= 0.0 && l.scale.is_finite()) {
            problems.push(format!("language {} has invalid scale {}", l.code, l.scale));
        }
        if let Some(r) = &l.rules {
            if !r.is_file() {
                problems.push(format!("rules file {} does not exist", r.display()));
            }
        }
    }
    if !problems.is_empty() {
        return Err(CliError::Spec(problems));
    }

    let mut generated = Vec::new();
    let mut manifest = GeneratedSpec {
        out: PathBuf::from("results"),
        dataset: Vec::new(),
        auxiliary: Vec::new(),
    };
    for lang in &syn.languages {
        let base = match &lang.rules {
            Some(p) => RuleSet::load(p)?,
            None => RuleSet::historical(),
        };
        let rules = base.scaled(lang.scale);
        let per_set = syn.train_tokens + syn.dev_tokens;
        let options = SyntheticOptions {
            language: lang.code.to_lowercase(),
            lexicon_size: syn.lexicon_size,
            tokens: per_set * lang.norm_sets,
            aux_size: syn.aux_size,
            zipf_exponent: syn.zipf_exponent,
        };
        let corpus = generate_synthetic_corpus(lang.seed, &options, &rules)?;
        let rel = PathBuf::from(lang.code.to_lowercase());
        let dir = out.join(&rel);
        fs::create_dir_all(&dir).map_err(io_error(&dir))?;
        write_atomic(&dir.join("rules.toml"), rules.to_toml().as_bytes())?;

        for (k, chunk) in corpus.normalization.pairs.chunks(per_set).enumerate() {
            let name = if lang.norm_sets == 1 {
                lang.code.to_uppercase()
            } else {
                format!("{}_{}", lang.code.to_uppercase(), k + 1)
            };
            let (train, dev) = chunk.split_at(syn.train_tokens);
            let train_rel = rel.join(format!("{name}.train.tsv"));
            let dev_rel = rel.join(format!("{name}.dev.tsv"));
            write(&out, &train_rel, train)?;
            write(&out, &dev_rel, dev)?;
            let identity = identity_baseline(&corpus.normalization.with_pairs(dev.to_vec()));
            generated.push(GeneratedDataset {
                name: name.clone(),
                language: options.language.clone(),
                identity,
            });
            manifest.dataset.push(DatasetEntry {
                name,
                language: options.language.clone(),
                train: train_rel,
                dev: dev_rel,
            });
        }
        for ds in [&corpus.autoencoding, &corpus.g2p, &corpus.lemmatization] {
            let path = rel.join(format!("{}.tsv", ds.task));
            write(&out, &path, &ds.pairs)?;
            manifest.auxiliary.push(AuxEntry {
                task: ds.task,
                language: options.language.clone(),
                path,
            });
        }
    }
    let text = toml::to_string(&manifest).map_err(|e| CliError::spec(e.to_string()))?;
    write_atomic(&out.join("spec.toml"), text.as_bytes())?;
    for g in &generated {
        println!(
            "{} ({}): dev identity baseline {:.2}",
            g.name, g.language, g.identity
        );
    }
    println!("spec written to {}", out.join("spec.toml").display());
    Ok(generated)
}

fn write(out: &Path, rel: &Path, pairs: &[normshare::data::TokenPair]) -> Result<()> {
    Ok(write_pairs(out.join(rel), pairs)?)
}
