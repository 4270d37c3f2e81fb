use std::path::Path;

use crate::autodiff::{ParamSet, Tensor};
use crate::checkpoint::{checkpoint_load, find, Entries};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::geneval::Probe;
use crate::prior::PriorModel;
use crate::vqvae::{Normalizer, VqVae};

fn param_entries(p: &ParamSet) -> Entries {
    p.iter().map(|(n, t)| (n.to_string(), t.clone())).collect()
}

fn meta(values: &[f32]) -> Tensor {
    Tensor::new([values.len()], values.to_vec()).expect("non-empty meta")
}

fn meta_usize(entries: &Entries, name: &str, n: usize) -> Result<Vec<usize>> {
    let t = find(entries, name)?;
    if t.len() != n {
        return Err(Error::Corruption(format!("{name} has {} values, expected {n}", t.len())));
    }
    Ok(t.data().iter().map(|&v| v as usize).collect())
}

fn normalizer(entries: &Entries) -> Result<Normalizer> {
    let t = find(entries, "meta.norm")?;
    match t.data() {
        [mean, std] => Ok(Normalizer { mean: *mean, std: *std }),
        _ => Err(Error::Corruption("meta.norm must hold two values".into())),
    }
}

fn load_params(params: &mut ParamSet, entries: &Entries) -> Result<()> {
    params.load_named(entries.iter().filter(|(n, _)| !n.starts_with("meta.")).map(|(n, t)| (n.as_str(), t)))
}

pub fn vqvae_entries(m: &VqVae) -> Entries {
    let mut e = param_entries(m.params());
    let (h, w) = m.input_shape();
    let n = m.normalizer();
    e.push(("meta.input".into(), meta(&[h as f32, w as f32])));
    e.push(("meta.norm".into(), meta(&[n.mean, n.std])));
    e
}

pub fn load_vqvae(cfg: &Config, path: &Path) -> Result<VqVae> {
    let entries = checkpoint_load(path)?;
    let dims = meta_usize(&entries, "meta.input", 2)?;
    let mut m = VqVae::new(&cfg.vqvae, dims[0], dims[1], 0)?;
    load_params(m.params_mut(), &entries)?;
    m.set_normalizer(normalizer(&entries)?);
    Ok(m)
}

pub fn prior_entries(m: &PriorModel) -> Entries {
    let mut e = param_entries(m.params());
    let (r, c) = m.grid_shape();
    e.push((
        "meta.prior".into(),
        meta(&[m.codebook_size() as f32, m.num_classes() as f32, r as f32, c as f32]),
    ));
    e
}

pub fn load_prior(cfg: &Config, path: &Path) -> Result<PriorModel> {
    let entries = checkpoint_load(path)?;
    let d = meta_usize(&entries, "meta.prior", 4)?;
    let mut m = PriorModel::new(&cfg.prior, d[0], d[1], d[2], d[3], 0)?;
    load_params(m.params_mut(), &entries)?;
    Ok(m)
}

pub fn probe_entries(p: &Probe) -> Entries {
    let mut e = param_entries(p.params());
    let (h, w) = p.input_shape();
    let n = p.normalizer();
    e.push(("meta.probe".into(), meta(&[p.num_classes() as f32, h as f32, w as f32])));
    e.push(("meta.norm".into(), meta(&[n.mean, n.std])));
    e
}

pub fn load_probe(cfg: &Config, path: &Path) -> Result<Probe> {
    let entries = checkpoint_load(path)?;
    let d = meta_usize(&entries, "meta.probe", 3)?;
    let mut p = Probe::new(&cfg.eval.probe, d[0], d[1], d[2], 0)?;
    load_params(p.params_mut(), &entries)?;
    p.set_normalizer(normalizer(&entries)?);
    Ok(p)
}
