//! Collapse of a mixed search network into a concrete genotype: per edge the
//! strongest real op wins, per node only the strongest edges survive.

use crate::nas::genotype::{Genotype, GenotypeCell, GenotypeEdge, GenotypeMeta};
use crate::nas::supernet::Alpha;
use crate::spaces::{SearchSpace, OP_NONE};
use crate::tensor::Scalar;

/// Strongest op on the edge, never `none`; ties keep the lowest op index.
fn retained_op(beta: &[f64], ops: &[String]) -> (usize, f64) {
    let mut best: Option<(usize, f64)> = None;
    for (o, (&b, name)) in beta.iter().zip(ops).enumerate() {
        if name == OP_NONE {
            continue;
        }
        if best.map_or(true, |(_, bb)| b > bb) {
            best = Some((o, b));
        }
    }
    best.expect("op catalog holds more than none")
}

/// Pick the architecture the logits currently favour. Per edge the highest
/// softmax weight among real ops is retained; per intermediate node the
/// `m_per_node` strongest incoming edges survive, ranked by the retained
/// op's weight with ties going to the lower source node. Shifting all of an
/// edge's logits by a constant never changes the outcome.
pub fn discretize<T: Scalar>(
    alpha: &Alpha<T>,
    space: &SearchSpace,
    meta: GenotypeMeta,
) -> Genotype {
    let mut cells = Vec::with_capacity(space.templates.len());
    for (t, template) in space.templates.iter().enumerate() {
        let retained: Vec<(usize, f64)> = (0..template.edges.len())
            .map(|e| retained_op(&alpha.beta(t, e), &template.ops))
            .collect();
        let mut edges = Vec::new();
        for node in template.intermediate_nodes() {
            let mut ranked = template.incoming(node);
            ranked.sort_by(|&a, &b| {
                retained[b].1.partial_cmp(&retained[a].1).unwrap().then(
                    template.edges[a].from.cmp(&template.edges[b].from),
                )
            });
            for &e in ranked.iter().take(space.m_per_node) {
                edges.push(GenotypeEdge {
                    to: template.edges[e].to,
                    from: template.edges[e].from,
                    op: template.ops[retained[e].0].clone(),
                });
            }
        }
        edges.sort_by_key(|e| (e.to, e.from));
        cells.push(GenotypeCell { edges });
    }
    Genotype { space: space.name.clone(), cells, meta }
}
