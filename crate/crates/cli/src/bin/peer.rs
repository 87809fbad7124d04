//! Reference classifier peer for `--classifier exec:dazzle-peer ...`.
//!
//! Serves either saved bundled-classifier weights or a seeded random linear
//! model over the line-delimited JSON protocol. The `--fault` modes
//! misbehave on purpose so session error handling can be exercised.

use std::io::{BufRead, Write};
use std::path::PathBuf;

use clap::{Parser, ValueEnum};
use dazzle_core::classifier::{Classifier, ConvNet, LinearModel};
use dazzle_core::Image;
use serde_json::{json, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Fault {
    None,
    /// Reply with a non-numeric logit.
    Malformed,
    /// Reply with the wrong request id.
    BadId,
    /// Exit without replying.
    Exit,
    /// Never reply.
    Hang,
}

#[derive(Parser, Debug)]
#[command(name = "dazzle-peer")]
struct Args {
    /// Bundled-classifier weights; a random linear model when absent.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    classes: usize,
    /// Input shape `h,w,c` of the linear model.
    #[arg(long, value_delimiter = ',', default_values_t = [64, 64, 3])]
    shape: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Fault::None)]
    fault: Fault,
    /// Requests answered normally before the fault kicks in.
    #[arg(long, default_value_t = 0)]
    fault_after: u64,
}

fn handle(model: &dyn Classifier, request: &Value) -> Result<Value, String> {
    let id = request["id"].as_u64().ok_or("missing id")?;
    let shape: Vec<usize> = request["shape"]
        .as_array()
        .ok_or("missing shape")?
        .iter()
        .map(|v| v.as_u64().map(|u| u as usize).ok_or("bad shape"))
        .collect::<Result<_, _>>()?;
    let pixels: Vec<f64> = request["pixels"]
        .as_array()
        .ok_or("missing pixels")?
        .iter()
        .map(|v| v.as_f64().ok_or("bad pixel"))
        .collect::<Result<_, _>>()?;
    let [h, w, c] = shape[..] else {
        return Err("shape must have three entries".into());
    };
    let x = Image::new(h, w, c, pixels).map_err(|e| e.to_string())?;
    match request["op"].as_str() {
        Some("logits") => Ok(json!({"id": id, "logits": model.logits(&x).map_err(|e| e.to_string())?})),
        Some("grad") => {
            let label = request["label"].as_u64().ok_or("missing label")? as usize;
            Ok(json!({"id": id, "grad": model.input_gradient(&x, label).map_err(|e| e.to_string())?}))
        }
        other => Err(format!("unknown op {other:?}")),
    }
}

fn main() {
    let args = Args::parse();
    let model: Box<dyn Classifier> = match &args.model {
        Some(path) => Box::new(ConvNet::load(path).unwrap_or_else(|e| {
            eprintln!("dazzle-peer: {e}");
            std::process::exit(2)
        })),
        None => {
            let [h, w, c] = args.shape[..] else {
                eprintln!("dazzle-peer: --shape needs h,w,c");
                std::process::exit(1)
            };
            Box::new(LinearModel::random((h, w, c), args.classes, 0.01, args.seed).expect("valid linear model"))
        }
    };

    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    writeln!(out, "{}", json!({"classes": model.num_classes()})).unwrap();
    out.flush().unwrap();

    let mut served = 0u64;
    for line in std::io::stdin().lock().lines() {
        let Ok(line) = line else { break };
        let request: Value = match serde_json::from_str(&line) {
            Ok(v) => v,
            Err(e) => {
                writeln!(out, "{}", json!({"id": null, "error": e.to_string()})).unwrap();
                out.flush().unwrap();
                continue;
            }
        };
        let faulty = served >= args.fault_after;
        served += 1;
        let id = request["id"].as_u64().unwrap_or(0);
        let reply = match (faulty, args.fault) {
            (true, Fault::Exit) => return,
            (true, Fault::Hang) => loop {
                std::thread::park();
            },
            (true, Fault::Malformed) => json!({"id": id, "logits": [1.0, "oops"]}),
            (true, Fault::BadId) => json!({"id": id + 1000, "logits": [0.0, 0.0]}),
            _ => handle(model.as_ref(), &request).unwrap_or_else(|e| json!({"id": id, "error": e})),
        };
        writeln!(out, "{reply}").unwrap();
        out.flush().unwrap();
    }
}
