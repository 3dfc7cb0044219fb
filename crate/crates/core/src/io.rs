//! Line-oriented dataset files.
//!
//! ```text
//! HEADER num_nodes num_edges feature_dim num_tasks classes_per_task directed(0|1)
//! NODE id task_id class_id f_1 ... f_K
//! EDGE u v
//! TASK t train: id ... test: id ...
//! ```
//!
//! Tokens are whitespace-separated; `#` starts a comment that runs to the
//! end of the line. Undirected files list each edge once. Features are
//! written with Rust's shortest round-trip float formatting, so a
//! save/load cycle reproduces every `f64` bit-exactly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;

use crate::graph::{Graph, TaskSequence, TaskView};
use crate::{Error, Result};

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

fn parse_token<T: std::str::FromStr>(tok: &str, line: usize, what: &str) -> Result<T> {
    tok.parse::<T>()
        .map_err(|_| parse_err(line, format!("cannot parse {what} from '{tok}'")))
}

/// Loads and validates a dataset file.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<(Graph, TaskSequence)> {
    let file = File::open(path.as_ref())?;
    parse_dataset(BufReader::new(file))
}

/// Parses a dataset from any reader; errors carry 1-based line numbers.
pub fn parse_dataset(reader: impl BufRead) -> Result<(Graph, TaskSequence)> {
    struct Header {
        num_nodes: usize,
        num_edges: usize,
        feature_dim: usize,
        num_tasks: usize,
        classes_per_task: usize,
        directed: bool,
    }

    let mut header: Option<Header> = None;
    let mut node_seen: Vec<bool> = Vec::new();
    let mut features: Array2<f64> = Array2::zeros((0, 0));
    let mut labels: Vec<usize> = Vec::new();
    let mut node_task: Vec<usize> = Vec::new();
    let mut edges: Vec<(usize, usize)> = Vec::new();
    let mut splits: Vec<Option<(Vec<usize>, Vec<usize>)>> = Vec::new();
    let mut nodes_read = 0usize;

    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        let content = match line.find('#') {
            Some(pos) => &line[..pos],
            None => &line[..],
        };
        let tokens: Vec<&str> = content.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        match tokens[0] {
            "HEADER" => {
                if header.is_some() {
                    return Err(parse_err(lineno, "duplicate HEADER"));
                }
                if tokens.len() != 7 {
                    return Err(parse_err(
                        lineno,
                        format!("HEADER expects 6 fields, got {}", tokens.len() - 1),
                    ));
                }
                let h = Header {
                    num_nodes: parse_token(tokens[1], lineno, "num_nodes")?,
                    num_edges: parse_token(tokens[2], lineno, "num_edges")?,
                    feature_dim: parse_token(tokens[3], lineno, "feature_dim")?,
                    num_tasks: parse_token(tokens[4], lineno, "num_tasks")?,
                    classes_per_task: parse_token(tokens[5], lineno, "classes_per_task")?,
                    directed: match tokens[6] {
                        "0" => false,
                        "1" => true,
                        other => {
                            return Err(parse_err(
                                lineno,
                                format!("directed flag must be 0 or 1, got '{other}'"),
                            ))
                        }
                    },
                };
                node_seen = vec![false; h.num_nodes];
                features = Array2::zeros((h.num_nodes, h.feature_dim));
                labels = vec![0; h.num_nodes];
                node_task = vec![0; h.num_nodes];
                splits = vec![None; h.num_tasks];
                header = Some(h);
            }
            "NODE" => {
                let h = header
                    .as_ref()
                    .ok_or_else(|| parse_err(lineno, "NODE before HEADER"))?;
                if tokens.len() != 4 + h.feature_dim {
                    return Err(parse_err(
                        lineno,
                        format!(
                            "NODE expects id, task, class and {} features, got {} fields",
                            h.feature_dim,
                            tokens.len() - 1
                        ),
                    ));
                }
                let id: usize = parse_token(tokens[1], lineno, "node id")?;
                if id >= h.num_nodes {
                    return Err(parse_err(lineno, format!("node id {id} out of range")));
                }
                if node_seen[id] {
                    return Err(parse_err(lineno, format!("duplicate NODE record for id {id}")));
                }
                node_seen[id] = true;
                node_task[id] = parse_token(tokens[2], lineno, "task id")?;
                if node_task[id] >= h.num_tasks {
                    return Err(parse_err(
                        lineno,
                        format!("task id {} out of range", node_task[id]),
                    ));
                }
                labels[id] = parse_token(tokens[3], lineno, "class id")?;
                for (d, tok) in tokens[4..].iter().enumerate() {
                    features[[id, d]] = parse_token(tok, lineno, "feature value")?;
                }
                nodes_read += 1;
            }
            "EDGE" => {
                let h = header
                    .as_ref()
                    .ok_or_else(|| parse_err(lineno, "EDGE before HEADER"))?;
                if tokens.len() != 3 {
                    return Err(parse_err(lineno, "EDGE expects exactly two endpoints"));
                }
                let u: usize = parse_token(tokens[1], lineno, "edge endpoint")?;
                let v: usize = parse_token(tokens[2], lineno, "edge endpoint")?;
                if u >= h.num_nodes || v >= h.num_nodes {
                    return Err(parse_err(lineno, format!("edge ({u},{v}) out of range")));
                }
                edges.push((u, v));
            }
            "TASK" => {
                let h = header
                    .as_ref()
                    .ok_or_else(|| parse_err(lineno, "TASK before HEADER"))?;
                if tokens.len() < 3 || tokens[2] != "train:" {
                    return Err(parse_err(lineno, "TASK expects `TASK t train: ... test: ...`"));
                }
                let t: usize = parse_token(tokens[1], lineno, "task id")?;
                if t >= h.num_tasks {
                    return Err(parse_err(lineno, format!("task id {t} out of range")));
                }
                if splits[t].is_some() {
                    return Err(parse_err(lineno, format!("duplicate TASK record for task {t}")));
                }
                let mut train = Vec::new();
                let mut test = Vec::new();
                let mut in_test = false;
                for tok in &tokens[3..] {
                    if *tok == "test:" {
                        if in_test {
                            return Err(parse_err(lineno, "duplicate test: marker"));
                        }
                        in_test = true;
                        continue;
                    }
                    let id: usize = parse_token(tok, lineno, "split node id")?;
                    if id >= h.num_nodes {
                        return Err(parse_err(lineno, format!("split node {id} out of range")));
                    }
                    if in_test {
                        test.push(id);
                    } else {
                        train.push(id);
                    }
                }
                if !in_test {
                    return Err(parse_err(lineno, "TASK line is missing the test: marker"));
                }
                splits[t] = Some((train, test));
            }
            other => {
                return Err(parse_err(
                    lineno,
                    format!("unknown record type '{other}' (expected HEADER/NODE/EDGE/TASK)"),
                ));
            }
        }
    }

    let h = header.ok_or_else(|| parse_err(0, "missing HEADER"))?;
    if nodes_read != h.num_nodes {
        return Err(Error::Validation(format!(
            "header promises {} nodes but {} NODE records were found",
            h.num_nodes, nodes_read
        )));
    }
    if edges.len() != h.num_edges {
        return Err(Error::Validation(format!(
            "header promises {} edges but {} EDGE records were found",
            h.num_edges,
            edges.len()
        )));
    }

    let graph = Graph::from_edges(h.num_nodes, &edges, h.directed, features, labels, node_task)?;

    let mut tasks = Vec::with_capacity(h.num_tasks);
    for (t, split) in splits.into_iter().enumerate() {
        let (mut train_ids, mut test_ids) =
            split.ok_or_else(|| Error::Validation(format!("missing TASK record for task {t}")))?;
        train_ids.sort_unstable();
        test_ids.sort_unstable();
        let node_ids: Vec<usize> = (0..h.num_nodes).filter(|&v| graph.node_task[v] == t).collect();
        let mut class_ids: Vec<usize> = node_ids.iter().map(|&v| graph.labels[v]).collect();
        class_ids.sort_unstable();
        class_ids.dedup();
        tasks.push(TaskView {
            task_id: t,
            node_ids,
            train_ids,
            test_ids,
            class_ids,
        });
    }
    let sequence = TaskSequence {
        tasks,
        classes_per_task: h.classes_per_task,
    };
    sequence.validate(&graph)?;
    Ok((graph, sequence))
}

/// Writes a dataset in the canonical layout accepted by [`load_dataset`].
pub fn save_dataset(
    path: impl AsRef<Path>,
    graph: &Graph,
    tasks: &TaskSequence,
) -> Result<()> {
    let file = File::create(path.as_ref())?;
    let mut w = BufWriter::new(file);
    write_dataset(&mut w, graph, tasks)?;
    w.flush()?;
    Ok(())
}

/// Serializes a dataset to any writer.
pub fn write_dataset(w: &mut impl Write, graph: &Graph, tasks: &TaskSequence) -> Result<()> {
    let n = graph.num_nodes();
    writeln!(
        w,
        "HEADER {} {} {} {} {} {}",
        n,
        graph.edge_count(),
        graph.feature_dim(),
        tasks.num_tasks(),
        tasks.classes_per_task,
        if graph.is_directed() { 1 } else { 0 }
    )?;
    for v in 0..n {
        write!(w, "NODE {} {} {}", v, graph.node_task[v], graph.labels[v])?;
        for d in 0..graph.feature_dim() {
            write!(w, " {}", graph.features[[v, d]])?;
        }
        writeln!(w)?;
    }
    for u in 0..n {
        for &v in graph.neighbors(u) {
            if graph.is_directed() || u < v {
                writeln!(w, "EDGE {u} {v}")?;
            }
        }
    }
    for tv in &tasks.tasks {
        write!(w, "TASK {} train:", tv.task_id)?;
        for &id in &tv.train_ids {
            write!(w, " {id}")?;
        }
        write!(w, " test:")?;
        for &id in &tv.test_ids {
            write!(w, " {id}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}
