//! CSV graph files, flat `key = value` run configs, and bundled data.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use log::info;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::graph::{Edge, EdgeCovariates, Node, SpatialGraph};
use crate::infer::AlleleObservation;
use crate::rng;

const COLUMBUS_NODES: &str = include_str!("../data/columbus_nodes.csv");
const COLUMBUS_EDGES: &str = include_str!("../data/columbus_edges.csv");

/// A graph plus the numeric node columns that are not coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedGraph {
    pub graph: SpatialGraph,
    pub attributes: BTreeMap<String, Vec<f64>>,
}

impl LoadedGraph {
    pub fn attribute(&self, name: &str) -> Result<&[f64]> {
        self.attributes
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::InvalidData(format!("node table has no column '{name}'")))
    }
}

fn parse_err(file: &str, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        file: file.to_string(),
        line: line as usize,
        message: message.into(),
    }
}

fn parse_f64(file: &str, line: u64, column: &str, raw: &str) -> Result<f64> {
    raw.trim()
        .parse::<f64>()
        .map_err(|_| parse_err(file, line, format!("column '{column}': '{raw}' is not a number")))
}

fn parse_indicator(file: &str, line: u64, column: &str, raw: &str) -> Result<bool> {
    match raw.trim() {
        "0" | "false" => Ok(false),
        "1" | "true" => Ok(true),
        other => Err(parse_err(file, line, format!("column '{column}': '{other}' is not 0 or 1"))),
    }
}

/// Parse node and edge tables. `nodes_name` and `edges_name` label errors.
///
/// Node table: `node_id` plus optional `x`, `y` and numeric attributes.
/// Edge table: `from`, `to`, `distance`, optional `downstream` and `barrier`
/// (0/1, default 0); any other column is a named extra covariate. With
/// `symmetric`, each record also adds the reverse edge.
pub fn read_graph<N: Read, E: Read>(
    nodes: N,
    nodes_name: &str,
    edges: E,
    edges_name: &str,
    symmetric: bool,
) -> Result<LoadedGraph> {
    let mut nr = csv::Reader::from_reader(nodes);
    let header: Vec<String> = nr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let id_col = header
        .iter()
        .position(|h| h == "node_id")
        .ok_or_else(|| parse_err(nodes_name, 1, "missing 'node_id' column"))?;
    let x_col = header.iter().position(|h| h == "x");
    let y_col = header.iter().position(|h| h == "y");
    if x_col.is_some() != y_col.is_some() {
        return Err(parse_err(nodes_name, 1, "columns 'x' and 'y' must appear together"));
    }
    let attr_cols: Vec<usize> = (0..header.len())
        .filter(|&c| c != id_col && Some(c) != x_col && Some(c) != y_col)
        .collect();
    let mut labels: BTreeMap<String, usize> = BTreeMap::new();
    let mut node_list = Vec::new();
    let mut attributes: BTreeMap<String, Vec<f64>> =
        attr_cols.iter().map(|&c| (header[c].clone(), Vec::new())).collect();
    for rec in nr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let label = rec[id_col].trim().to_string();
        if label.is_empty() {
            return Err(parse_err(nodes_name, line, "empty node_id"));
        }
        if labels.insert(label.clone(), node_list.len()).is_some() {
            return Err(parse_err(nodes_name, line, format!("duplicate node_id '{label}'")));
        }
        let coords = match (x_col, y_col) {
            (Some(xc), Some(yc)) => Some((
                parse_f64(nodes_name, line, "x", &rec[xc])?,
                parse_f64(nodes_name, line, "y", &rec[yc])?,
            )),
            _ => None,
        };
        for &c in &attr_cols {
            let v = parse_f64(nodes_name, line, &header[c], &rec[c])?;
            attributes.get_mut(&header[c]).unwrap().push(v);
        }
        node_list.push(Node { label, coords });
    }

    let mut er = csv::Reader::from_reader(edges);
    let header: Vec<String> = er.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let col = |name: &str| header.iter().position(|h| h == name);
    let need = |name: &str| col(name).ok_or_else(|| parse_err(edges_name, 1, format!("missing '{name}' column")));
    let (from_col, to_col, dist_col) = (need("from")?, need("to")?, need("distance")?);
    let (down_col, bar_col) = (col("downstream"), col("barrier"));
    let extra_cols: Vec<usize> = (0..header.len())
        .filter(|&c| ![Some(from_col), Some(to_col), Some(dist_col), down_col, bar_col].contains(&Some(c)))
        .collect();
    let mut edge_list = Vec::new();
    let mut seen = BTreeSet::new();
    for rec in er.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let endpoint = |c: usize| {
            let l = rec[c].trim();
            labels
                .get(l)
                .copied()
                .ok_or_else(|| parse_err(edges_name, line, format!("edge endpoint '{l}' is not a node")))
        };
        let (from, to) = (endpoint(from_col)?, endpoint(to_col)?);
        if from == to {
            return Err(parse_err(edges_name, line, format!("self-edge at '{}'", node_list[from].label)));
        }
        let distance = parse_f64(edges_name, line, "distance", &rec[dist_col])?;
        if !(distance.is_finite() && distance > 0.0) {
            return Err(parse_err(edges_name, line, format!("non-positive distance {distance}")));
        }
        let mut cov = EdgeCovariates::new(
            distance,
            down_col.map_or(Ok(false), |c| parse_indicator(edges_name, line, "downstream", &rec[c]))?,
            bar_col.map_or(Ok(false), |c| parse_indicator(edges_name, line, "barrier", &rec[c]))?,
        );
        for &c in &extra_cols {
            cov.extras.push((header[c].clone(), parse_f64(edges_name, line, &header[c], &rec[c])?));
        }
        let pairs = if symmetric { vec![(from, to), (to, from)] } else { vec![(from, to)] };
        for (a, b) in pairs {
            if !seen.insert((a, b)) {
                return Err(parse_err(
                    edges_name,
                    line,
                    format!("duplicate edge {}->{}", node_list[a].label, node_list[b].label),
                ));
            }
            edge_list.push(Edge {
                from: a,
                to: b,
                covariates: cov.clone(),
            });
        }
    }
    let graph = SpatialGraph::new(node_list, edge_list)?;
    info!("loaded graph: {} nodes, {} directed edges", graph.node_count(), graph.edges().len());
    Ok(LoadedGraph { graph, attributes })
}

pub fn load_graph(nodes: &Path, edges: &Path, symmetric: bool) -> Result<LoadedGraph> {
    read_graph(
        File::open(nodes)?,
        &nodes.display().to_string(),
        File::open(edges)?,
        &edges.display().to_string(),
        symmetric,
    )
}

/// Write node and edge tables that [`read_graph`] reads back unchanged
/// (with `symmetric = false`).
pub fn write_graph<N: Write, E: Write>(loaded: &LoadedGraph, nodes: N, edges: E) -> Result<()> {
    let g = &loaded.graph;
    let has_coords = g.nodes().iter().all(|n| n.coords.is_some());
    let mut w = csv::Writer::from_writer(nodes);
    let mut header = vec!["node_id".to_string()];
    if has_coords {
        header.extend(["x".to_string(), "y".to_string()]);
    }
    header.extend(loaded.attributes.keys().cloned());
    w.write_record(&header)?;
    for (i, n) in g.nodes().iter().enumerate() {
        let mut rec = vec![n.label.clone()];
        if let (true, Some((x, y))) = (has_coords, n.coords) {
            rec.extend([format!("{x}"), format!("{y}")]);
        }
        rec.extend(loaded.attributes.values().map(|v| format!("{}", v[i])));
        w.write_record(&rec)?;
    }
    w.flush()?;

    let extra_names: Vec<String> = g
        .edges()
        .first()
        .map(|e| e.covariates.extras.iter().map(|(k, _)| k.clone()).collect())
        .unwrap_or_default();
    let mut w = csv::Writer::from_writer(edges);
    let mut header: Vec<String> = ["from", "to", "distance", "downstream", "barrier"].map(String::from).to_vec();
    header.extend(extra_names.iter().cloned());
    w.write_record(&header)?;
    for e in g.edges() {
        let c = &e.covariates;
        let mut rec = vec![
            g.nodes()[e.from].label.clone(),
            g.nodes()[e.to].label.clone(),
            format!("{}", c.distance),
            (c.downstream as u8).to_string(),
            (c.barrier as u8).to_string(),
        ];
        for name in &extra_names {
            let v = c
                .extra(name)
                .ok_or_else(|| Error::InvalidData(format!("edge {}->{} lacks covariate '{name}'", e.from, e.to)))?;
            rec.push(format!("{v}"));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// `node_id,value` rows.
pub fn write_field_csv<W: Write>(graph: &SpatialGraph, values: &[f64], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["node_id", "value"])?;
    for (n, v) in graph.nodes().iter().zip(values) {
        w.write_record([n.label.clone(), format!("{v}")])?;
    }
    w.flush()?;
    Ok(())
}

/// Genotype table `locus,individual,node_id,slot,allele` with 1-based locus
/// and allele numbers and node labels from `graph`.
pub fn read_genotypes<R: Read>(input: R, name: &str, graph: &SpatialGraph) -> Result<Vec<AlleleObservation>> {
    let labels: BTreeMap<&str, usize> = graph.nodes().iter().enumerate().map(|(i, n)| (n.label.as_str(), i)).collect();
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let expected = ["locus", "individual", "node_id", "slot", "allele"];
    if header != expected {
        return Err(parse_err(name, 1, format!("expected header {}", expected.join(","))));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let int = |c: usize, what: &str| {
            rec[c]
                .trim()
                .parse::<usize>()
                .map_err(|_| parse_err(name, line, format!("{what} '{}' is not a non-negative integer", &rec[c])))
        };
        let locus = int(0, "locus")?;
        if locus == 0 {
            return Err(parse_err(name, line, "loci are numbered from 1"));
        }
        let node = *labels
            .get(rec[2].trim())
            .ok_or_else(|| parse_err(name, line, format!("unknown node '{}'", &rec[2])))?;
        out.push(AlleleObservation {
            locus: locus - 1,
            individual: int(1, "individual")?,
            node,
            slot: int(3, "slot")?.min(u8::MAX as usize) as u8,
            allele: int(4, "allele")?,
        });
    }
    Ok(out)
}

pub fn write_genotypes<W: Write>(graph: &SpatialGraph, obs: &[AlleleObservation], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["locus", "individual", "node_id", "slot", "allele"])?;
    for o in obs {
        w.write_record([
            (o.locus + 1).to_string(),
            o.individual.to_string(),
            graph.nodes()[o.node].label.clone(),
            o.slot.to_string(),
            o.allele.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Flat `key = value` configuration. `#` starts a comment.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    entries: BTreeMap<String, String>,
}

impl RunConfig {
    /// Parse `text`, rejecting keys outside `allowed` and repeated keys.
    pub fn parse(text: &str, allowed: &[&str]) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("config line {}: expected key = value", n + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !allowed.contains(&k) {
                return Err(Error::Config(format!("config line {}: unknown key '{k}'", n + 1)));
            }
            if entries.insert(k.to_string(), v.to_string()).is_some() {
                return Err(Error::Config(format!("config line {}: key '{k}' given twice", n + 1)));
            }
        }
        Ok(RunConfig { entries })
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_string(), value.into());
    }

    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.entries
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::Config(format!("missing required key '{key}'")))
    }

    pub fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|_| Error::Config(format!("key '{key}': cannot parse '{v}'")))
            })
            .transpose()
    }

    pub fn parsed_or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.parsed(key)?.unwrap_or(default))
    }

    pub fn require_parsed<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.parsed(key)?
            .ok_or_else(|| Error::Config(format!("missing required key '{key}'")))
    }

    /// Comma-separated list of numbers.
    pub fn list_f64(&self, key: &str) -> Result<Option<Vec<f64>>> {
        self.get(key)
            .map(|v| {
                v.split(',')
                    .map(|s| {
                        s.trim()
                            .parse::<f64>()
                            .map_err(|_| Error::Config(format!("key '{key}': '{s}' is not a number")))
                    })
                    .collect()
            })
            .transpose()
    }

    /// Every stochastic command needs an explicit seed.
    pub fn seed(&self) -> Result<u64> {
        self.require_parsed("seed")
    }
}

/// Columbus neighbourhood crime data on rook (shared boundary) adjacency.
#[derive(Debug, Clone)]
pub struct ColumbusData {
    pub graph: SpatialGraph,
    /// Residential burglaries and vehicle thefts per thousand households.
    pub crime: Vec<f64>,
    /// Mean housing value in thousands of dollars.
    pub home_values: Vec<f64>,
}

pub fn columbus_fixture() -> ColumbusData {
    let loaded = read_graph(
        COLUMBUS_NODES.as_bytes(),
        "columbus_nodes.csv",
        COLUMBUS_EDGES.as_bytes(),
        "columbus_edges.csv",
        true,
    )
    .expect("bundled Columbus fixture is valid");
    ColumbusData {
        crime: loaded.attributes["crime"].clone(),
        home_values: loaded.attributes["hoval"].clone(),
        graph: loaded.graph,
    }
}

/// Raw text of the bundled fixture files, for hashing.
pub fn columbus_fixture_sources() -> [(&'static str, &'static str); 2] {
    [("columbus_nodes.csv", COLUMBUS_NODES), ("columbus_edges.csv", COLUMBUS_EDGES)]
}

/// Center and scale to unit sample standard deviation.
pub fn standardize(v: &[f64]) -> Vec<f64> {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    v.iter().map(|x| (x - m) / sd).collect()
}

/// Shape of a synthetic dendritic stream network.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamNetworkSpec {
    /// Nodes on the main stem, outlet first.
    pub main_stem: usize,
    /// (junction node on the main stem, tributary length).
    pub tributaries: Vec<(usize, usize)>,
    /// Child nodes whose link to their downstream parent is blocked part of the year.
    pub barriers: Vec<usize>,
    /// Reach lengths are drawn uniformly from this range.
    pub distance_range: (f64, f64),
}

impl Default for StreamNetworkSpec {
    /// 30 reaches: a 14-node main stem with tributaries of 9 and 7 reaches,
    /// one seasonal barrier on the main stem and one on the first tributary.
    fn default() -> Self {
        StreamNetworkSpec {
            main_stem: 14,
            tributaries: vec![(4, 9), (9, 7)],
            barriers: vec![7, 17],
            distance_range: (0.5, 1.5),
        }
    }
}

/// Each reach links to its downstream parent in both directions; the
/// child-to-parent edge is flagged `downstream`, and both directions of a
/// barrier link are flagged `barrier`.
pub fn synthetic_stream_network(spec: &StreamNetworkSpec, seed: u64) -> Result<SpatialGraph> {
    let mut parent: Vec<Option<usize>> = vec![None];
    for i in 1..spec.main_stem {
        parent.push(Some(i - 1));
    }
    for &(junction, len) in &spec.tributaries {
        if junction >= spec.main_stem {
            return Err(Error::Config(format!("tributary junction {junction} is not on the main stem")));
        }
        let mut up = junction;
        for _ in 0..len {
            parent.push(Some(up));
            up = parent.len() - 1;
        }
    }
    let m = parent.len();
    for &b in &spec.barriers {
        if b == 0 || b >= m {
            return Err(Error::Config(format!("barrier child {b} has no downstream link")));
        }
    }
    let (lo, hi) = spec.distance_range;
    if !(lo > 0.0 && hi >= lo) {
        return Err(Error::Config("distance range must be positive and ordered".into()));
    }
    let mut r = rng::from_seed(seed);
    let nodes = (0..m)
        .map(|i| Node {
            label: format!("r{i}"),
            coords: None,
        })
        .collect();
    let mut edges = Vec::new();
    for (child, p) in parent.iter().enumerate() {
        let Some(p) = *p else { continue };
        let d = lo + (hi - lo) * r.random::<f64>();
        let barrier = spec.barriers.contains(&child);
        edges.push(Edge {
            from: child,
            to: p,
            covariates: EdgeCovariates::new(d, true, barrier),
        });
        edges.push(Edge {
            from: p,
            to: child,
            covariates: EdgeCovariates::new(d, false, barrier),
        });
    }
    SpatialGraph::new(nodes, edges)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn columbus_shape() {
        let c = columbus_fixture();
        assert_eq!(c.graph.node_count(), 49);
        assert!(c.graph.is_symmetric());
        assert_eq!(c.crime.len(), 49);
        assert_eq!(c.home_values.len(), 49);
    }

    #[test]
    fn dangling_endpoint_reports_line() {
        let nodes = "node_id\na\nb\n";
        let edges = "from,to,distance\na,b,1\nb,c,1\n";
        let err = read_graph(nodes.as_bytes(), "n.csv", edges.as_bytes(), "e.csv", false).unwrap_err();
        match err {
            Error::Parse { file, line, .. } => assert_eq!((file.as_str(), line), ("e.csv", 3)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicate_and_distance_errors() {
        let nodes = "node_id\na\nb\n";
        let dup = "from,to,distance\na,b,1\nb,a,1\n";
        assert!(read_graph(nodes.as_bytes(), "n", dup.as_bytes(), "e", true).is_err());
        assert!(read_graph(nodes.as_bytes(), "n", dup.as_bytes(), "e", false).is_ok());
        let neg = "from,to,distance\na,b,0\n";
        assert!(matches!(
            read_graph(nodes.as_bytes(), "n", neg.as_bytes(), "e", false),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn empty_edge_table_loads() {
        let g = read_graph("node_id\na\nb\n".as_bytes(), "n", "from,to,distance\n".as_bytes(), "e", true).unwrap();
        assert_eq!(g.graph.edges().len(), 0);
        assert!(!crate::graph::check_irreducible(
            &crate::graph::GeneratorMatrix::from_rates(2, std::iter::empty()).unwrap()
        ));
    }

    #[test]
    fn config_rejects_unknown_and_repeated_keys() {
        let ok = RunConfig::parse("# run\nseed = 4\niterations=10 # inline\n", &["seed", "iterations"]).unwrap();
        assert_eq!(ok.seed().unwrap(), 4);
        assert_eq!(ok.require_parsed::<usize>("iterations").unwrap(), 10);
        assert!(RunConfig::parse("sead = 4", &["seed"]).is_err());
        assert!(RunConfig::parse("seed = 4\nseed = 5", &["seed"]).is_err());
        assert!(RunConfig::parse("iterations = 3", &["seed", "iterations"]).unwrap().seed().is_err());
    }

    #[test]
    fn genotypes_round_trip() {
        let g = synthetic_stream_network(&StreamNetworkSpec::default(), 2).unwrap();
        let (spec, _) = crate::infer::simulate_genetics(&g, &[0.0, 1.0, -1.0], &[vec![0.0, 0.2], vec![0.0, 0.1, 0.3]], 2, 5).unwrap();
        let mut buf = Vec::new();
        write_genotypes(&g, &spec.observations, &mut buf).unwrap();
        assert_eq!(read_genotypes(&buf[..], "g", &g).unwrap(), spec.observations);
    }

    #[test]
    fn stream_network_shape() {
        let g = synthetic_stream_network(&StreamNetworkSpec::default(), 1).unwrap();
        assert_eq!(g.node_count(), 30);
        assert!(g.is_symmetric());
        assert_eq!(g.edges().len(), 58);
        assert_eq!(g.edges().iter().filter(|e| e.covariates.barrier).count(), 4);
        assert_eq!(g.edges().iter().filter(|e| e.covariates.downstream).count(), 29);
    }
}
