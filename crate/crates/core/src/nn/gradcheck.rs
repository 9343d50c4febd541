use super::{Graph, NnError, Tensor, Var};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

fn evaluate<F>(f: &F, inputs: &[Tensor]) -> Result<(Graph, Vec<Var>, Var), NnError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, NnError>,
{
    let mut g = Graph::new();
    let vars = inputs
        .iter()
        .map(|t| g.input(t.clone()))
        .collect::<Result<Vec<_>, _>>()?;
    let out = f(&mut g, &vars)?;
    if g.value(out).len() != 1 {
        return Err(NnError::NotScalar(g.shape(out).to_vec()));
    }
    Ok((g, vars, out))
}

/// Reverse-mode and central-difference derivatives of one input element.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradPair {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradPair {
    /// `|g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|)`.
    pub fn relative_error(&self) -> f64 {
        (self.analytic - self.numeric).abs() / (self.analytic.abs() + self.numeric.abs()).max(1e-8)
    }
}

/// Both derivatives of a scalar function for every input element.
pub fn grad_pairs<F>(f: F, inputs: &[Tensor]) -> Result<Vec<GradPair>, NnError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, NnError>,
{
    let (graph, vars, out) = evaluate(&f, inputs)?;
    let grads = graph.backward(out)?;
    let mut pairs = Vec::new();
    let mut probe = inputs.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(*var, inputs[k].len());
        for i in 0..inputs[k].len() {
            let orig = inputs[k].data()[i];
            probe[k].data_mut()[i] = orig + FD_STEP;
            let (gp, _, op) = evaluate(&f, &probe)?;
            probe[k].data_mut()[i] = orig - FD_STEP;
            let (gm, _, om) = evaluate(&f, &probe)?;
            probe[k].data_mut()[i] = orig;
            pairs.push(GradPair {
                input: k,
                index: i,
                analytic: analytic[i],
                numeric: (gp.value(op).item()? - gm.value(om).item()?) / (2.0 * FD_STEP),
            });
        }
    }
    Ok(pairs)
}

/// Largest relative disagreement between the reverse-mode gradient of a
/// scalar function and central differences, over every input element:
/// `|g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|)`.
///
/// Max-pooling is non-differentiable where two candidates tie; random
/// continuous inputs avoid those points with probability one, so callers
/// should not probe at constructed ties.
pub fn grad_check<F>(f: F, inputs: &[Tensor]) -> Result<f64, NnError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, NnError>,
{
    Ok(grad_pairs(f, inputs)?
        .iter()
        .map(GradPair::relative_error)
        .fold(0.0, f64::max))
}
