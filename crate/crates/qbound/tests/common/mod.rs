#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use qbound::ModelFile;
use qbound_core::model::{Conv2d, Dense, LayerSpec, Network, NetworkSpec, Weights};
use qbound_core::Tensor;

pub fn dense(i: usize, o: usize, name: &str, bias: bool) -> LayerSpec {
    LayerSpec::Dense(Dense {
        in_features: i,
        out_features: o,
        has_bias: bias,
        weight: format!("{name}.weight"),
        bias: bias.then(|| format!("{name}.bias")),
    })
}

pub fn conv(in_ch: usize, out_ch: usize, name: &str) -> LayerSpec {
    LayerSpec::Conv2d(Conv2d { in_ch, out_ch, kernel: 3, stride: 1, padding: 1, groups: 1, weight: name.into() })
}

/// Weights exactly representable in `f32`, so in-memory and stored agree.
pub fn f32_weights(spec: &NetworkSpec, seed: u64) -> Weights {
    qbound_core::model::random_weights(spec, seed)
        .unwrap()
        .into_iter()
        .map(|(k, t)| (k, t.map(|v| f64::from(v as f32)).unwrap()))
        .collect()
}

pub fn save(dir: &Path, spec: NetworkSpec, weights: Weights) -> PathBuf {
    let f = ModelFile::from_network(Network::new(spec, weights).unwrap(), None);
    f.save_dir(dir).unwrap().0
}

pub fn toy_mlp(dir: &Path, bias: bool) -> PathBuf {
    let spec = NetworkSpec::new(
        vec![4],
        vec![
            dense(4, 6, "fc1", bias),
            LayerSpec::Activation { kind: Default::default() },
            dense(6, 5, "fc2", bias),
            LayerSpec::Activation { kind: Default::default() },
            dense(5, 3, "fc3", bias),
        ],
    );
    let w = f32_weights(&spec, 11);
    save(dir, spec, w)
}

pub fn toy_conv(dir: &Path) -> PathBuf {
    let spec = NetworkSpec::new(
        vec![2, 5, 5],
        vec![conv(2, 3, "c1"), LayerSpec::Activation { kind: Default::default() }, conv(3, 2, "c2")],
    );
    let w = f32_weights(&spec, 12);
    save(dir, spec, w)
}

pub fn tensor(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
    Tensor::new(shape, data).unwrap()
}

pub fn qbound(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qbound")).args(args).output().unwrap()
}

pub fn qbound_env(args: &[&str], key: &str, value: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qbound")).args(args).env(key, value).output().unwrap()
}

/// Successful stdout parsed as CSV records (header first).
pub fn csv_rows(out: &Output) -> Vec<Vec<String>> {
    assert!(out.status.success(), "qbound failed: {}", String::from_utf8_lossy(&out.stderr));
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(out.stdout.as_slice());
    r.records().map(|rec| rec.unwrap().iter().map(str::to_string).collect()).collect()
}

pub fn col(rows: &[Vec<String>], name: &str) -> usize {
    rows[0].iter().position(|c| c == name).unwrap_or_else(|| panic!("no column {name}"))
}
