//! Training configuration: defaults, `key=value` file parsing, and validation.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::SyntheticConfig;
use crate::transport::SinkhornParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Hard,
    TopK,
    Soft,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContrastiveForm {
    /// Positive term included in the softmax denominator.
    InfoNce,
    /// Denominator over negatives only; unbounded below.
    PaperLiteral,
}

/// How candidate groups are matched across modalities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Matching {
    /// Sinkhorn plans on the current embeddings.
    Transport,
    /// Sample `i` matched to sample `i` with uniform weight.
    Identity,
}

/// How a matched group is scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupMeasure {
    /// Gram-determinant volume.
    Volume,
    /// Mean `1 − cos` over all pairs in the group.
    PairwiseCosine,
}

/// What counts as a correct retrieval hit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Retrieval {
    /// Any gallery item with the query's class label.
    Class,
    /// Only the gallery item with the query's sample index.
    Instance,
}

macro_rules! keyword_enum {
    ($ty:ty, $field:literal, $($name:literal => $variant:expr),+ $(,)?) => {
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s.trim() {
                    $($name => Ok($variant),)+
                    other => Err(Error::config(
                        $field,
                        format!("unknown value `{other}`, expected one of: {}", [$($name),+].join(", ")),
                    )),
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                $(if *self == $variant { return f.write_str($name); })+
                unreachable!()
            }
        }
    };
}

keyword_enum!(Strategy, "strategy", "hard" => Strategy::Hard, "topk" => Strategy::TopK, "soft" => Strategy::Soft);
keyword_enum!(ContrastiveForm, "contrastive_form", "infonce" => ContrastiveForm::InfoNce, "paper_literal" => ContrastiveForm::PaperLiteral);
keyword_enum!(Matching, "matching", "ot" => Matching::Transport, "identity" => Matching::Identity);
keyword_enum!(GroupMeasure, "measure", "volume" => GroupMeasure::Volume, "cosine" => GroupMeasure::PairwiseCosine);
keyword_enum!(Retrieval, "retrieval", "class" => Retrieval::Class, "instance" => Retrieval::Instance);

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Number of modalities.
    pub k: usize,
    pub batch: usize,
    /// Embedding dimension.
    pub d: usize,
    pub d_in: usize,
    pub classes: usize,
    pub sigma: f64,
    pub epsilon: f64,
    pub tau: f64,
    pub lambda: f64,
    pub kprime: usize,
    pub strategy: Strategy,
    pub contrastive_form: ContrastiveForm,
    pub negatives: usize,
    /// Draws per anchor for the soft strategy.
    pub samples: usize,
    /// 1-based anchor modality for group composition and the contrastive term.
    pub anchor: usize,
    pub matching: Matching,
    pub measure: GroupMeasure,
    pub lr: f64,
    pub steps: usize,
    pub seed: u64,
    pub sinkhorn_iters: usize,
    pub sinkhorn_tol: f64,
    /// Share of encoder structure common to all modalities at init.
    pub warm_start: f64,
    /// What counts as a correct hit when scoring retrieval.
    pub retrieval: Retrieval,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            k: 3,
            batch: 64,
            d: 32,
            d_in: 16,
            classes: 4,
            sigma: 0.1,
            epsilon: 0.05,
            tau: 0.1,
            lambda: 1.0,
            kprime: 3,
            strategy: Strategy::TopK,
            contrastive_form: ContrastiveForm::InfoNce,
            negatives: 8,
            samples: 8,
            anchor: 1,
            matching: Matching::Transport,
            measure: GroupMeasure::Volume,
            lr: 0.5,
            steps: 500,
            seed: 0,
            sinkhorn_iters: 2000,
            sinkhorn_tol: 1e-9,
            warm_start: 0.8,
            retrieval: Retrieval::Class,
        }
    }
}

/// Every recognized key, in canonical spelling.
pub const KEYS: &[&str] = &[
    "k",
    "batch",
    "d",
    "d_in",
    "classes",
    "sigma",
    "epsilon",
    "tau",
    "lambda",
    "kprime",
    "strategy",
    "contrastive_form",
    "negatives",
    "samples",
    "anchor",
    "matching",
    "measure",
    "lr",
    "steps",
    "seed",
    "sinkhorn_iters",
    "sinkhorn_tol",
    "warm_start",
    "retrieval",
];

fn parse<T: FromStr>(field: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::config(field, format!("cannot parse `{}`", value.trim())))
}

impl TrainConfig {
    /// Set one field from its textual value. Does not validate ranges.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key.trim() {
            "k" => self.k = parse("k", value)?,
            "batch" | "B" => self.batch = parse("batch", value)?,
            "d" => self.d = parse("d", value)?,
            "d_in" => self.d_in = parse("d_in", value)?,
            "classes" | "C" => self.classes = parse("classes", value)?,
            "sigma" => self.sigma = parse("sigma", value)?,
            "epsilon" => self.epsilon = parse("epsilon", value)?,
            "tau" => self.tau = parse("tau", value)?,
            "lambda" => self.lambda = parse("lambda", value)?,
            "kprime" => self.kprime = parse("kprime", value)?,
            "strategy" => self.strategy = value.parse()?,
            "contrastive_form" => self.contrastive_form = value.parse()?,
            "negatives" => self.negatives = parse("negatives", value)?,
            "samples" => self.samples = parse("samples", value)?,
            "anchor" => self.anchor = parse("anchor", value)?,
            "matching" => self.matching = value.parse()?,
            "measure" => self.measure = value.parse()?,
            "lr" => self.lr = parse("lr", value)?,
            "steps" => self.steps = parse("steps", value)?,
            "seed" => self.seed = parse("seed", value)?,
            "sinkhorn_iters" => self.sinkhorn_iters = parse("sinkhorn_iters", value)?,
            "sinkhorn_tol" => self.sinkhorn_tol = parse("sinkhorn_tol", value)?,
            "warm_start" => self.warm_start = parse("warm_start", value)?,
            "retrieval" => self.retrieval = value.parse()?,
            other => return Err(Error::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// Apply `key=value` lines on top of `self`. Blank lines and `#` comments
    /// are ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::invalid(format!("config line {}: expected key=value, got `{line}`", lineno + 1))
            })?;
            self.set(key, value)?;
        }
        Ok(())
    }

    /// Defaults, overlaid with `text`, validated.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        fn check(ok: bool, field: &str, bound: &str, value: impl fmt::Display) -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::config(field, format!("must be {bound}, got {value}")))
            }
        }
        let finite_pos = |x: f64| x > 0.0 && x.is_finite();
        check(self.k >= 2, "k", ">= 2", self.k)?;
        check(self.classes >= 2, "classes", ">= 2", self.classes)?;
        check(self.batch >= self.classes, "batch", ">= classes", self.batch)?;
        check(self.d >= 1, "d", ">= 1", self.d)?;
        check(self.d_in >= 1, "d_in", ">= 1", self.d_in)?;
        check(self.sigma >= 0.0 && self.sigma.is_finite(), "sigma", ">= 0", self.sigma)?;
        check(finite_pos(self.epsilon), "epsilon", "> 0", self.epsilon)?;
        check(finite_pos(self.tau), "tau", "> 0", self.tau)?;
        check(
            self.lambda >= 0.0 && self.lambda.is_finite(),
            "lambda",
            ">= 0",
            self.lambda,
        )?;
        check(
            (1..=self.batch).contains(&self.kprime),
            "kprime",
            &format!("in [1, {}]", self.batch),
            self.kprime,
        )?;
        check(self.negatives >= 1, "negatives", ">= 1", self.negatives)?;
        check(self.samples >= 1, "samples", ">= 1", self.samples)?;
        check(
            (1..=self.k).contains(&self.anchor),
            "anchor",
            &format!("in [1, {}]", self.k),
            self.anchor,
        )?;
        check(self.lr >= 0.0 && self.lr.is_finite(), "lr", ">= 0", self.lr)?;
        check(finite_pos(self.sinkhorn_tol), "sinkhorn_tol", "> 0", self.sinkhorn_tol)?;
        check(
            (0.0..=1.0).contains(&self.warm_start),
            "warm_start",
            "in [0, 1]",
            self.warm_start,
        )?;
        check(self.sinkhorn_iters >= 1, "sinkhorn_iters", ">= 1", self.sinkhorn_iters)?;
        Ok(())
    }

    pub fn synthetic(&self) -> SyntheticConfig {
        SyntheticConfig {
            classes: self.classes,
            modalities: self.k,
            samples: self.batch,
            input_dim: self.d_in,
            sigma: self.sigma,
            seed: self.seed,
        }
    }

    pub fn sinkhorn(&self) -> SinkhornParams {
        SinkhornParams {
            epsilon: self.epsilon,
            max_iters: self.sinkhorn_iters,
            tol: self.sinkhorn_tol,
        }
    }

    /// `key=value` lines for every field, loadable by [`TrainConfig::from_text`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            out.push_str(key);
            out.push('=');
            out.push_str(&self.get(key));
            out.push('\n');
        }
        out
    }

    fn get(&self, key: &str) -> String {
        match key {
            "k" => self.k.to_string(),
            "batch" => self.batch.to_string(),
            "d" => self.d.to_string(),
            "d_in" => self.d_in.to_string(),
            "classes" => self.classes.to_string(),
            "sigma" => self.sigma.to_string(),
            "epsilon" => self.epsilon.to_string(),
            "tau" => self.tau.to_string(),
            "lambda" => self.lambda.to_string(),
            "kprime" => self.kprime.to_string(),
            "strategy" => self.strategy.to_string(),
            "contrastive_form" => self.contrastive_form.to_string(),
            "negatives" => self.negatives.to_string(),
            "samples" => self.samples.to_string(),
            "anchor" => self.anchor.to_string(),
            "matching" => self.matching.to_string(),
            "measure" => self.measure.to_string(),
            "lr" => self.lr.to_string(),
            "steps" => self.steps.to_string(),
            "seed" => self.seed.to_string(),
            "sinkhorn_iters" => self.sinkhorn_iters.to_string(),
            "sinkhorn_tol" => self.sinkhorn_tol.to_string(),
            "warm_start" => self.warm_start.to_string(),
            "retrieval" => self.retrieval.to_string(),
            _ => unreachable!("unknown key {key}"),
        }
    }
}
