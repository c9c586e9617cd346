#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};


pub fn walkfield(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_walkfield"))
        .args(args)
        .arg("--quiet")
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

pub fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn run_ok(args: &[&str], cwd: &Path) {
    let o = walkfield(args, cwd);
    assert!(o.status.success(), "{args:?} failed: {}", stderr(&o));
}

pub fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

fn csv_outputs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

/// Runs every verb twice with the same inputs and compares CSV outputs byte for byte.
pub fn determinism_check(d: &Path) -> Vec<(String, bool)> {
    write(d, "n.csv", "node_id,x,y\na,0,0\nb,1,0\nc,1,1\nd,0,1\n");
    write(
        d,
        "e.csv",
        "from,to,distance\na,b,1\nb,a,1\nb,c,1.5\nc,b,1.5\nc,d,1\nd,c,1\nd,a,2\na,d,2\n",
    );
    let graph = "nodes = n.csv\nedges = e.csv\nbeta = 0.1, 0.5, -0.5\nseed = 11\n";
    write(d, "build.cfg", graph);
    write(d, "ident.cfg", &format!("{graph}trials = 20\n"));
    write(d, "field.cfg", &format!("{graph}sigma = 2\nrealizations = 3\n"));
    let demo = "birth = 1, 1.2, 0.8, 1\ndeath = 1\nt_end = 1\n";
    write(d, "pop.cfg", &format!("{graph}{demo}scale = 300\nsnapshot_every = 0.1\n"));
    write(d, "conv.cfg", &format!("{graph}{demo}scales = 50, 500\nreplicates = 3\n"));
    write(
        d,
        "fit.cfg",
        "graph = columbus\nmodel = gaussian-spatial\nstandardize_covariate = true\niterations = 500\n\
         burn_in = 100\nchains = 2\nseed = 11\n",
    );
    write(
        d,
        "gen.cfg",
        "graph = stream\nmodel = genetics\ngenotypes = simulate\ndata_seed = 2\nloci = 2\n\
         individuals_per_node = 3\niterations = 300\nburn_in = 50\nchains = 2\nseed = 11\n",
    );
    let verbs: &[(&str, &[&str])] = &[
        ("build", &["build", "--config", "build.cfg"]),
        ("check-ident", &["check-ident", "--config", "ident.cfg"]),
        ("simulate-field", &["simulate-field", "--config", "field.cfg"]),
        ("simulate-population", &["simulate-population", "--config", "pop.cfg"]),
        ("convergence", &["convergence", "--config", "conv.cfg"]),
        ("fit", &["fit", "--config", "fit.cfg"]),
        ("fit-genetics", &["fit", "--config", "gen.cfg"]),
        ("dic", &["dic", "run1/fit", "run1/fit-genetics"]),
        ("diagnose", &["diagnose", "run1/fit", "run1/fit-genetics"]),
    ];
    let mut results = Vec::new();
    for (name, args) in verbs {
        let mut outs = Vec::new();
        for rep in ["run1", "run2"] {
            let out = format!("{rep}/{name}");
            let mut full = args.to_vec();
            full.extend(["--out", &out]);
            run_ok(&full, d);
            outs.push(csv_outputs(&d.join(&out)));
        }
        let same = !outs[0].is_empty() && outs[0] == outs[1];
        results.push((name.to_string(), same));
    }
    results
}

