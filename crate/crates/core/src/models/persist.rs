//! Line-oriented model files.
//!
//! ```text
//! READMIT-MODEL v1
//! kind logistic
//! [columns]
//! count 2
//! los_days
//! n_prev_admissions
//! [hyperparameters]
//! l2_penalty 0.0001
//! [parameters]
//! intercept -2.9
//! weights 0.04 0.61
//! ...
//! end
//! ```
//!
//! Every value line is a key followed by space-separated values. Floats are
//! written in shortest round-trip form, so reading a file back reproduces the
//! model bit for bit.

use std::fmt::Display;
use std::io::{BufRead, Write};
use std::str::FromStr;

use super::forest::{ForestParams, Node, RandomForestModel, Tree};
use super::logistic::{LogisticModel, TrainingLog};
use super::pca::PcaTransform;
use super::svm::LinearSvmModel;
use super::{ModelError, TrainedModel};

pub const MAGIC: &str = "READMIT-MODEL v1";

struct Out<W: Write> {
    sink: W,
}

impl<W: Write> Out<W> {
    fn raw(&mut self, line: &str) -> std::io::Result<()> {
        writeln!(self.sink, "{line}")
    }

    fn one(&mut self, key: &str, value: impl Display) -> std::io::Result<()> {
        writeln!(self.sink, "{key} {value}")
    }

    fn many<T: Display>(
        &mut self,
        key: &str,
        values: impl IntoIterator<Item = T>,
    ) -> std::io::Result<()> {
        write!(self.sink, "{key}")?;
        for v in values {
            write!(self.sink, " {v}")?;
        }
        writeln!(self.sink)
    }
}

fn opt(v: Option<usize>) -> String {
    v.map_or("none".into(), |n| n.to_string())
}

pub fn write_model<W: Write>(sink: W, model: &TrainedModel) -> std::io::Result<()> {
    let mut out = Out { sink };
    out.raw(MAGIC)?;
    out.one("kind", model.kind())?;
    out.raw("[columns]")?;
    out.one("count", model.columns().len())?;
    for c in model.columns() {
        out.raw(c)?;
    }
    match model {
        TrainedModel::Logistic { model, .. } => {
            out.raw("[hyperparameters]")?;
            out.one("l2_penalty", model.l2_penalty)?;
            out.raw("[parameters]")?;
            write_logistic(&mut out, model)?;
        }
        TrainedModel::PcaLogistic {
            pca,
            components,
            model,
            ..
        } => {
            out.raw("[hyperparameters]")?;
            out.one("l2_penalty", model.l2_penalty)?;
            out.one("variance_target", pca.variance_target)?;
            out.raw("[parameters]")?;
            out.one("input_width", pca.input_width)?;
            out.many("means", &pca.means)?;
            out.many("stds", &pca.stds)?;
            out.many("kept", &pca.kept)?;
            out.many("eigenvalues", &pca.eigenvalues)?;
            out.many("explained", &pca.explained)?;
            out.one("n_components", pca.components.len())?;
            for c in &pca.components {
                out.many("component", c)?;
            }
            out.many("components_used", components)?;
            write_logistic(&mut out, model)?;
        }
        TrainedModel::Forest { model, .. } => {
            let p = model.params;
            out.raw("[hyperparameters]")?;
            out.one("ntree", p.ntree)?;
            out.one("mtry", p.mtry)?;
            out.one("nodesize", p.nodesize)?;
            out.one("maxnodes", opt(p.maxnodes))?;
            out.one("seed", model.seed)?;
            out.raw("[parameters]")?;
            out.one("n_features", model.n_features)?;
            out.many("importances", &model.importances)?;
            for (i, tree) in model.trees.iter().enumerate() {
                out.many("tree", [i, tree.nodes.len()])?;
                for node in &tree.nodes {
                    match node {
                        Node::Split {
                            feature,
                            threshold,
                            left,
                            right,
                        } => writeln!(out.sink, "split {feature} {threshold} {left} {right}")?,
                        Node::Leaf { positives, total } => {
                            writeln!(out.sink, "leaf {positives} {total}")?
                        }
                    }
                }
            }
        }
        TrainedModel::Svm { model, .. } => {
            out.raw("[hyperparameters]")?;
            out.one("c", model.c)?;
            out.one("epochs", model.epochs)?;
            out.one("seed", model.seed)?;
            out.raw("[parameters]")?;
            out.many("means", &model.means)?;
            out.many("scales", &model.scales)?;
            out.many("weights", &model.weights)?;
            out.one("intercept", model.intercept)?;
            out.many("objective_trace", &model.objective_trace)?;
        }
    }
    out.raw("end")?;
    out.sink.flush()
}

fn write_logistic<W: Write>(out: &mut Out<W>, m: &LogisticModel) -> std::io::Result<()> {
    out.one("intercept", m.intercept)?;
    out.many("weights", &m.weights)?;
    out.one("iterations", m.log.iterations)?;
    out.one("converged", m.log.converged)?;
    out.one("objective", m.log.objective)?;
    out.one("neg_log_likelihood", m.log.neg_log_likelihood)?;
    out.one("gradient_norm", m.log.gradient_norm)?;
    out.many("trace", &m.log.trace)
}

struct In {
    lines: Vec<String>,
    at: usize,
}

impl In {
    fn err<T>(&self, message: impl Into<String>) -> Result<T, ModelError> {
        Err(ModelError::Format {
            line: self.at,
            message: message.into(),
        })
    }

    fn next_line(&mut self) -> Result<String, ModelError> {
        if self.at >= self.lines.len() {
            self.at += 1;
            return self.err("unexpected end of file");
        }
        self.at += 1;
        Ok(self.lines[self.at - 1].clone())
    }

    fn exact(&mut self, expected: &str) -> Result<(), ModelError> {
        let line = self.next_line()?;
        if line != expected {
            return self.err(format!("expected `{expected}`, found `{line}`"));
        }
        Ok(())
    }

    fn values(&mut self, key: &str) -> Result<Vec<String>, ModelError> {
        let line = self.next_line()?;
        let mut parts = line.split(' ');
        if parts.next() != Some(key) {
            return self.err(format!("expected key `{key}`, found `{line}`"));
        }
        Ok(parts
            .filter(|p| !p.is_empty())
            .map(str::to_string)
            .collect())
    }

    fn parse<T: FromStr>(&self, key: &str, token: &str) -> Result<T, ModelError> {
        token
            .parse()
            .or_else(|_| self.err(format!("`{key}`: cannot parse `{token}`")))
    }

    fn one<T: FromStr>(&mut self, key: &str) -> Result<T, ModelError> {
        let v = self.values(key)?;
        if v.len() != 1 {
            return self.err(format!("`{key}` takes one value, found {}", v.len()));
        }
        self.parse(key, &v[0])
    }

    fn many<T: FromStr>(&mut self, key: &str) -> Result<Vec<T>, ModelError> {
        let v = self.values(key)?;
        v.iter().map(|t| self.parse(key, t)).collect()
    }

    fn sized<T: FromStr>(&mut self, key: &str, len: usize) -> Result<Vec<T>, ModelError> {
        let v: Vec<T> = self.many(key)?;
        if v.len() != len {
            return self.err(format!("`{key}` holds {} values, expected {len}", v.len()));
        }
        Ok(v)
    }
}

fn read_logistic(
    input: &mut In,
    l2_penalty: f64,
    width: usize,
) -> Result<LogisticModel, ModelError> {
    let intercept = input.one("intercept")?;
    let weights = input.sized("weights", width)?;
    Ok(LogisticModel {
        weights,
        intercept,
        l2_penalty,
        log: TrainingLog {
            iterations: input.one("iterations")?,
            converged: input.one("converged")?,
            objective: input.one("objective")?,
            neg_log_likelihood: input.one("neg_log_likelihood")?,
            gradient_norm: input.one("gradient_norm")?,
            trace: input.many("trace")?,
        },
    })
}

pub fn read_model<R: BufRead>(source: R) -> Result<TrainedModel, ModelError> {
    let lines = source
        .lines()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| ModelError::Format {
            line: 0,
            message: e.to_string(),
        })?;
    let mut input = In { lines, at: 0 };
    let magic = input.next_line()?;
    if magic != MAGIC {
        return input.err(format!(
            "not a model file (expected `{MAGIC}`, found `{magic}`)"
        ));
    }
    let kind: String = input.one("kind")?;
    input.exact("[columns]")?;
    let count: usize = input.one("count")?;
    let columns = (0..count)
        .map(|_| input.next_line())
        .collect::<Result<Vec<_>, _>>()?;
    input.exact("[hyperparameters]")?;
    let model = match kind.as_str() {
        "logistic" => {
            let l2 = input.one("l2_penalty")?;
            input.exact("[parameters]")?;
            let model = read_logistic(&mut input, l2, count)?;
            TrainedModel::Logistic { columns, model }
        }
        "pca_logistic" => {
            let l2 = input.one("l2_penalty")?;
            let variance_target = input.one("variance_target")?;
            input.exact("[parameters]")?;
            let input_width: usize = input.one("input_width")?;
            let means = input.sized("means", input_width)?;
            let stds = input.sized("stds", input_width)?;
            let kept: Vec<usize> = input.many("kept")?;
            let eigenvalues = input.sized("eigenvalues", kept.len())?;
            let explained = input.sized("explained", kept.len())?;
            let n_components: usize = input.one("n_components")?;
            let components = (0..n_components)
                .map(|_| input.sized("component", kept.len()))
                .collect::<Result<Vec<_>, _>>()?;
            let used: Vec<usize> = input.many("components_used")?;
            if used.iter().any(|&c| c >= n_components) {
                return input.err("components_used refers past the retained components");
            }
            let model = read_logistic(&mut input, l2, used.len())?;
            TrainedModel::PcaLogistic {
                columns,
                pca: PcaTransform {
                    input_width,
                    means,
                    stds,
                    kept,
                    eigenvalues,
                    explained,
                    components,
                    variance_target,
                },
                components: used,
                model,
            }
        }
        "random_forest" => {
            let ntree: usize = input.one("ntree")?;
            let mtry = input.one("mtry")?;
            let nodesize = input.one("nodesize")?;
            let maxnodes: String = input.one("maxnodes")?;
            let maxnodes = if maxnodes == "none" {
                None
            } else {
                Some(input.parse("maxnodes", &maxnodes)?)
            };
            let seed = input.one("seed")?;
            input.exact("[parameters]")?;
            let n_features: usize = input.one("n_features")?;
            let importances = input.sized("importances", n_features)?;
            let mut trees = Vec::with_capacity(ntree);
            for t in 0..ntree {
                let head: Vec<usize> = input.sized("tree", 2)?;
                if head[0] != t {
                    return input.err(format!("expected tree {t}, found {}", head[0]));
                }
                let mut nodes = Vec::with_capacity(head[1]);
                for _ in 0..head[1] {
                    let line = input.next_line()?;
                    let parts: Vec<&str> = line.split(' ').collect();
                    let node = match parts.as_slice() {
                        ["split", f, thr, l, r] => Node::Split {
                            feature: input.parse("split", f)?,
                            threshold: input.parse("split", thr)?,
                            left: input.parse("split", l)?,
                            right: input.parse("split", r)?,
                        },
                        ["leaf", p, n] => Node::Leaf {
                            positives: input.parse("leaf", p)?,
                            total: input.parse("leaf", n)?,
                        },
                        _ => return input.err(format!("bad node line `{line}`")),
                    };
                    if let Node::Split {
                        feature,
                        left,
                        right,
                        ..
                    } = node
                    {
                        if feature >= n_features || left >= head[1] || right >= head[1] {
                            return input.err("node refers out of range");
                        }
                    }
                    nodes.push(node);
                }
                trees.push(Tree { nodes });
            }
            TrainedModel::Forest {
                columns,
                model: RandomForestModel {
                    params: ForestParams {
                        ntree,
                        mtry,
                        nodesize,
                        maxnodes,
                    },
                    seed,
                    n_features,
                    trees,
                    importances,
                },
            }
        }
        "linear_svm" => {
            let c = input.one("c")?;
            let epochs = input.one("epochs")?;
            let seed = input.one("seed")?;
            input.exact("[parameters]")?;
            TrainedModel::Svm {
                model: LinearSvmModel {
                    means: input.sized("means", count)?,
                    scales: input.sized("scales", count)?,
                    weights: input.sized("weights", count)?,
                    intercept: input.one("intercept")?,
                    objective_trace: input.many("objective_trace")?,
                    c,
                    epochs,
                    seed,
                },
                columns,
            }
        }
        other => return input.err(format!("unknown model kind `{other}`")),
    };
    input.exact("end")?;
    Ok(model)
}
