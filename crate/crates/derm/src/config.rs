//! `key = value` configuration grouped under `[section]` headers.
//!
//! ```text
//! [data]
//! manifest = data/manifest.csv
//! image_size = 224
//!
//! [model]
//! kind = parallel
//! fusion = spline
//! ```
//!
//! `#` starts a comment. Unknown sections and keys are errors that cite the
//! line. Relative paths are taken relative to the config file.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use derm_core::data::{AugmentationConfig, NormalizationStats};
use derm_core::models::{FusionKind, ModelConfig, ModelKind};
use derm_core::nn::FusionActivation;
use derm_core::train::{SelectMetric, TrainConfig};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub name: String,
    pub line: usize,
    pub entries: Vec<Entry>,
}

fn line_err(line: usize, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("line {line}: {msg}"))
}

pub fn parse_sections(text: &str) -> CliResult<Vec<Section>> {
    let mut sections: Vec<Section> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        }
        .trim();
        if body.is_empty() {
            continue;
        }
        if let Some(name) = body.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| line_err(line, "unterminated section header"))?
                .trim();
            if sections.iter().any(|s| s.name == name) {
                return Err(line_err(line, format!("section [{name}] appears twice")));
            }
            sections.push(Section {
                name: name.to_string(),
                line,
                entries: Vec::new(),
            });
            continue;
        }
        let (key, value) = body
            .split_once('=')
            .ok_or_else(|| line_err(line, format!("expected `key = value`, got {body:?}")))?;
        let section = sections
            .last_mut()
            .ok_or_else(|| line_err(line, "key outside of any [section]"))?;
        let key = key.trim();
        if section.entries.iter().any(|e| e.key == key) {
            return Err(line_err(line, format!("duplicate key {key:?}")));
        }
        let value = value.trim();
        let value = value
            .strip_prefix('"')
            .and_then(|v| v.strip_suffix('"'))
            .unwrap_or(value);
        section.entries.push(Entry {
            key: key.to_string(),
            value: value.to_string(),
            line,
        });
    }
    Ok(sections)
}

impl Entry {
    fn parse<T: FromStr>(&self) -> CliResult<T>
    where
        T::Err: std::fmt::Display,
    {
        self.value
            .parse()
            .map_err(|e| line_err(self.line, format!("{} = {:?}: {e}", self.key, self.value)))
    }

    fn list<T: FromStr>(&self) -> CliResult<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.value
            .split(',')
            .map(|p| {
                p.trim()
                    .parse()
                    .map_err(|e| line_err(self.line, format!("{} = {:?}: {e}", self.key, self.value)))
            })
            .collect()
    }

    fn pair(&self) -> CliResult<(f64, f64)> {
        match self.list::<f64>()?.as_slice() {
            &[a, b] => Ok((a, b)),
            _ => Err(line_err(self.line, format!("{} needs two comma-separated numbers", self.key))),
        }
    }

    fn rgb(&self) -> CliResult<[f32; 3]> {
        match self.list::<f32>()?.as_slice() {
            &[a, b, c] => Ok([a, b, c]),
            _ => Err(line_err(self.line, format!("{} needs three comma-separated numbers", self.key))),
        }
    }

    fn path(&self, base: &Path) -> PathBuf {
        let p = PathBuf::from(&self.value);
        if p.is_absolute() {
            p
        } else {
            base.join(p)
        }
    }

    fn unknown(&self, section: &str) -> CliError {
        line_err(self.line, format!("unknown key {:?} in [{section}]", self.key))
    }

    fn choice<T: Copy>(&self, options: &[(&str, T)]) -> CliResult<T> {
        options
            .iter()
            .find(|(n, _)| *n == self.value)
            .map(|&(_, v)| v)
            .ok_or_else(|| {
                let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
                line_err(self.line, format!("{} must be one of {}", self.key, names.join(", ")))
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    /// Image paths in manifests are relative to this directory.
    pub data_root: PathBuf,
    pub manifest: Option<PathBuf>,
    /// Where `train.csv`, `val.csv` and `test.csv` live.
    pub split_dir: PathBuf,
    pub image_size: usize,
    pub stats: NormalizationStats,
}

impl DataConfig {
    fn new(base: &Path) -> Self {
        DataConfig {
            data_root: base.to_path_buf(),
            manifest: None,
            split_dir: base.join("splits"),
            image_size: 224,
            stats: NormalizationStats::IMAGENET,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub augment: AugmentationConfig,
}

const KINDS: &[(&str, ModelKind)] = &[("sequential", ModelKind::Sequential), ("parallel", ModelKind::Parallel)];
const FUSIONS: &[(&str, FusionKind)] = &[("eq5", FusionKind::Eq5), ("spline", FusionKind::Spline)];
const ACTIVATIONS: &[(&str, FusionActivation)] =
    &[("sigmoid", FusionActivation::Sigmoid), ("identity", FusionActivation::Identity)];
const SELECTS: &[(&str, SelectMetric)] =
    &[("weighted_f1", SelectMetric::WeightedF1), ("malignant_f1", SelectMetric::MalignantF1)];

fn choice_name<T: PartialEq>(options: &[(&'static str, T)], v: &T) -> &'static str {
    options.iter().find(|(_, o)| o == v).map(|(n, _)| *n).unwrap()
}

fn apply_data(d: &mut DataConfig, e: &Entry, base: &Path) -> CliResult<()> {
    match e.key.as_str() {
        "data_root" => d.data_root = e.path(base),
        "manifest" => d.manifest = Some(e.path(base)),
        "split_dir" => d.split_dir = e.path(base),
        "image_size" => d.image_size = e.parse()?,
        "mean" => d.stats.mean = e.rgb()?,
        "std" => d.stats.std = e.rgb()?,
        _ => return Err(e.unknown("data")),
    }
    Ok(())
}

fn apply_model(m: &mut ModelConfig, e: &Entry) -> CliResult<()> {
    match e.key.as_str() {
        "kind" => m.kind = e.choice(KINDS)?,
        "backbone_channels" => m.backbone.stage_channels = e.list()?,
        "d_model" => m.encoder.d_model = e.parse()?,
        "n_heads" => m.encoder.n_heads = e.parse()?,
        "n_layers" => m.encoder.n_layers = e.parse()?,
        "ffn_dim" => m.encoder.ffn_dim = e.parse()?,
        "dropout" => m.encoder.dropout_prob = e.parse()?,
        "patch_size" => m.patch_size = e.parse()?,
        "fusion" => m.fusion = e.choice(FUSIONS)?,
        "fusion_hidden" => m.fusion_hidden = e.parse()?,
        "fusion_out" => m.fusion_out = e.parse()?,
        "fusion_activation" => m.fusion_activation = e.choice(ACTIVATIONS)?,
        "spline_grid_size" => m.spline_grid_size = e.parse()?,
        "spline_order" => m.spline_order = e.parse()?,
        "spline_range" => m.spline_range = e.pair()?,
        _ => return Err(e.unknown("model")),
    }
    Ok(())
}

fn apply_train(t: &mut TrainConfig, e: &Entry) -> CliResult<()> {
    match e.key.as_str() {
        "epochs" => t.epochs = e.parse()?,
        "batch_size" => t.batch_size = e.parse()?,
        "lr" => t.base_lr = e.parse()?,
        "weight_decay" => t.weight_decay = e.parse()?,
        "lr_step" => t.lr_step = e.parse()?,
        "lr_gamma" => t.lr_gamma = e.parse()?,
        "seed" => t.seed = e.parse()?,
        "deterministic" => t.deterministic = e.parse()?,
        "select" => t.select = e.choice(SELECTS)?,
        _ => return Err(e.unknown("train")),
    }
    Ok(())
}

fn apply_augment(a: &mut AugmentationConfig, e: &Entry) -> CliResult<()> {
    match e.key.as_str() {
        "enabled" => a.enabled = e.parse()?,
        "crop_scale" => a.crop_scale = e.pair()?,
        "crop_aspect" => a.crop_aspect = e.pair()?,
        "rotation_degrees" => a.rotation_degrees = e.parse()?,
        "hflip_prob" => a.hflip_prob = e.parse()?,
        "vflip_prob" => a.vflip_prob = e.parse()?,
        "jitter_factor_range" => a.jitter_factor_range = e.pair()?,
        "grayscale_prob" => a.grayscale_prob = e.parse()?,
        "blur_prob" => a.blur_prob = e.parse()?,
        "blur_sigma_range" => a.blur_sigma_range = e.pair()?,
        "blur_kernel" => a.blur_kernel = e.parse()?,
        "output_size" => a.output_size = e.parse()?,
        _ => return Err(e.unknown("augment")),
    }
    Ok(())
}

impl RunConfig {
    /// Defaults for everything, with paths anchored at `base`.
    pub fn with_base(base: &Path) -> Self {
        RunConfig {
            data: DataConfig::new(base),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            augment: AugmentationConfig::default(),
        }
    }

    pub fn parse(text: &str, base: &Path) -> CliResult<Self> {
        let mut cfg = RunConfig::with_base(base);
        let mut output_size_set = false;
        for s in parse_sections(text)? {
            if !["data", "model", "train", "augment"].contains(&s.name.as_str()) {
                return Err(line_err(s.line, format!("unknown section [{}]", s.name)));
            }
            for e in &s.entries {
                match s.name.as_str() {
                    "data" => apply_data(&mut cfg.data, e, base)?,
                    "model" => apply_model(&mut cfg.model, e)?,
                    "train" => apply_train(&mut cfg.train, e)?,
                    "augment" => {
                        output_size_set |= e.key == "output_size";
                        apply_augment(&mut cfg.augment, e)?
                    }
                    _ => unreachable!(),
                }
            }
        }
        cfg.model.image_size = cfg.data.image_size;
        if !output_size_set {
            cfg.augment.output_size = cfg.data.image_size;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        RunConfig::parse(&text, base).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn validate(&self) -> CliResult<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.data.stats.validate()?;
        if self.augment.enabled {
            self.augment.validate()?;
            if self.augment.output_size != self.data.image_size {
                return Err(CliError::config(format!(
                    "augment.output_size ({}) must equal data.image_size ({})",
                    self.augment.output_size, self.data.image_size
                )));
            }
        }
        Ok(())
    }
}

fn rgb(v: [f32; 3]) -> String {
    format!("{}, {}, {}", v[0], v[1], v[2])
}

/// `[data]` (size and normalization only) and `[model]`: everything needed to
/// rebuild a network and feed it. Floats print in shortest round-trip form,
/// so parsing the text back yields identical values.
pub fn architecture_text(model: &ModelConfig, stats: &NormalizationStats) -> String {
    let mut s = String::new();
    let channels: Vec<String> = model.backbone.stage_channels.iter().map(|c| c.to_string()).collect();
    let _ = write!(
        s,
        "[data]\nimage_size = {}\nmean = {}\nstd = {}\n\n",
        model.image_size,
        rgb(stats.mean),
        rgb(stats.std)
    );
    let _ = writeln!(s, "[model]");
    let _ = writeln!(s, "kind = {}", choice_name(KINDS, &model.kind));
    let _ = writeln!(s, "backbone_channels = {}", channels.join(", "));
    let _ = writeln!(s, "d_model = {}", model.encoder.d_model);
    let _ = writeln!(s, "n_heads = {}", model.encoder.n_heads);
    let _ = writeln!(s, "n_layers = {}", model.encoder.n_layers);
    let _ = writeln!(s, "ffn_dim = {}", model.encoder.ffn_dim);
    let _ = writeln!(s, "dropout = {}", model.encoder.dropout_prob);
    let _ = writeln!(s, "patch_size = {}", model.patch_size);
    let _ = writeln!(s, "fusion = {}", choice_name(FUSIONS, &model.fusion));
    let _ = writeln!(s, "fusion_hidden = {}", model.fusion_hidden);
    let _ = writeln!(s, "fusion_out = {}", model.fusion_out);
    let _ = writeln!(s, "fusion_activation = {}", choice_name(ACTIVATIONS, &model.fusion_activation));
    let _ = writeln!(s, "spline_grid_size = {}", model.spline_grid_size);
    let _ = writeln!(s, "spline_order = {}", model.spline_order);
    let _ = writeln!(s, "spline_range = {}, {}", model.spline_range.0, model.spline_range.1);
    s
}

pub fn train_text(t: &TrainConfig) -> String {
    format!(
        "[train]\nepochs = {}\nbatch_size = {}\nlr = {}\nweight_decay = {}\nlr_step = {}\nlr_gamma = {}\nseed = {}\ndeterministic = {}\nselect = {}\n",
        t.epochs,
        t.batch_size,
        t.base_lr,
        t.weight_decay,
        t.lr_step,
        t.lr_gamma,
        t.seed,
        t.deterministic,
        choice_name(SELECTS, &t.select)
    )
}

/// Reads back the sections written by [`architecture_text`] and
/// [`train_text`]; `[state]` is returned untouched for the caller.
pub fn parse_embedded(text: &str) -> CliResult<(ModelConfig, NormalizationStats, TrainConfig, Option<Section>)> {
    let mut data = DataConfig::new(Path::new("."));
    let mut model = ModelConfig::default();
    let mut train = TrainConfig::default();
    let mut state = None;
    for s in parse_sections(text)? {
        match s.name.as_str() {
            "data" => {
                for e in &s.entries {
                    match e.key.as_str() {
                        "image_size" | "mean" | "std" => apply_data(&mut data, e, Path::new("."))?,
                        _ => return Err(e.unknown("data")),
                    }
                }
            }
            "model" => s.entries.iter().try_for_each(|e| apply_model(&mut model, e))?,
            "train" => s.entries.iter().try_for_each(|e| apply_train(&mut train, e))?,
            "state" => state = Some(s),
            other => return Err(line_err(s.line, format!("unknown section [{other}]"))),
        }
    }
    model.image_size = data.image_size;
    model.validate()?;
    Ok((model, data.stats, train, state))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_key_cites_its_line() {
        let text = "[train]\nepochs = 3\n\n# note\nepoch = 4\n";
        match RunConfig::parse(text, Path::new("/x")) {
            Err(CliError::Config(m)) => assert!(m.contains("line 5") && m.contains("epoch"), "{m}"),
            r => panic!("{r:?}"),
        }
        assert!(RunConfig::parse("[trian]\n", Path::new("/x")).is_err());
        assert!(RunConfig::parse("epochs = 3\n", Path::new("/x")).is_err());
    }

    #[test]
    fn values_and_paths() {
        let text = "[data]\nmanifest = m.csv\ndata_root = /abs\nimage_size = 64\n[model]\nkind = parallel\nbackbone_channels = 8, 16\nspline_range = -3, 3\n[train]\nlr = 0.001 # inline\nepochs = 2\n[augment]\ncrop_scale = 0.5, 1\n";
        let cfg = RunConfig::parse(text, Path::new("/cfg")).unwrap();
        assert_eq!(cfg.data.manifest, Some(PathBuf::from("/cfg/m.csv")));
        assert_eq!(cfg.data.data_root, PathBuf::from("/abs"));
        assert_eq!(cfg.data.split_dir, PathBuf::from("/cfg/splits"));
        assert_eq!((cfg.model.image_size, cfg.augment.output_size), (64, 64));
        assert_eq!(cfg.model.kind, ModelKind::Parallel);
        assert_eq!(cfg.model.backbone.stage_channels, vec![8, 16]);
        assert_eq!(cfg.model.spline_range, (-3.0, 3.0));
        assert_eq!((cfg.train.base_lr, cfg.train.epochs), (0.001, 2));
        assert_eq!(cfg.augment.crop_scale, (0.5, 1.0));
    }

    #[test]
    fn bad_values_are_config_errors() {
        for text in ["[train]\nepochs = 0\n", "[model]\nkind = serial\n", "[train]\nlr = fast\n", "[data]\nmean = 1, 2\n"] {
            assert!(matches!(RunConfig::parse(text, Path::new(".")), Err(CliError::Config(_))), "{text}");
        }
    }

    #[test]
    fn embedded_text_round_trips() {
        let mut m = ModelConfig {
            kind: ModelKind::Parallel,
            image_size: 32,
            fusion: FusionKind::Eq5,
            spline_range: (-2.5, 1.75),
            ..ModelConfig::default()
        };
        m.encoder.dropout_prob = 0.15;
        let t = TrainConfig {
            base_lr: 3e-4,
            weight_decay: 1e-5,
            ..TrainConfig::default()
        };
        let stats = NormalizationStats::IMAGENET;
        let text = format!("{}\n{}", architecture_text(&m, &stats), train_text(&t));
        let (m2, s2, t2, state) = parse_embedded(&text).unwrap();
        assert_eq!((m2, s2, t2), (m, stats, t));
        assert!(state.is_none());
    }
}
