use super::{Graph, NodeId};
use crate::error::{Result, SimError};
use std::io::{BufRead, Write};

/// Writes `n d` then one `u v` line per edge, `u < v`, lexicographic order.
pub fn write_graph<W: Write>(g: &Graph, mut out: W) -> Result<()> {
    writeln!(out, "{} {}", g.n(), g.d())?;
    for (u, v) in g.edges() {
        writeln!(out, "{u} {v}")?;
    }
    Ok(())
}

pub fn read_graph<R: BufRead>(input: R) -> Result<Graph> {
    let mut lines = input.lines();
    let header = lines.next().ok_or_else(|| SimError::GraphFormat("empty file".into()))??;
    let (n, d) = parse_pair(&header)?;
    let mut edges = Vec::with_capacity(n * d / 2);
    let mut prev: Option<(usize, usize)> = None;
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (u, v) = parse_pair(&line)?;
        if u >= v {
            return Err(SimError::GraphFormat(format!("edge line `{line}` must have u < v")));
        }
        if prev.is_some_and(|p| p >= (u, v)) {
            return Err(SimError::GraphFormat(format!("edge line `{line}` out of order")));
        }
        prev = Some((u, v));
        edges.push((u as NodeId, v as NodeId));
    }
    Graph::from_edges(n, d, &edges)
}

fn parse_pair(line: &str) -> Result<(usize, usize)> {
    let mut it = line.split_whitespace().map(str::parse::<usize>);
    match (it.next(), it.next(), it.next()) {
        (Some(Ok(a)), Some(Ok(b)), None) => Ok((a, b)),
        _ => Err(SimError::GraphFormat(format!("expected two integers, got `{line}`"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::generate_regular_expander;

    #[test]
    fn round_trips() {
        let g = generate_regular_expander(30, 4, 2).unwrap();
        let mut buf = Vec::new();
        write_graph(&g, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("30 4\n"));
        assert_eq!(read_graph(&buf[..]).unwrap(), g);
    }

    #[test]
    fn rejects_unordered_edges() {
        let text = "4 3\n0 1\n0 3\n0 2\n1 2\n1 3\n2 3\n";
        assert!(read_graph(text.as_bytes()).is_err());
        let text = "4 3\n0 1\n0 2\n0 3\n1 2\n1 3\n3 2\n";
        assert!(read_graph(text.as_bytes()).is_err());
    }
}
