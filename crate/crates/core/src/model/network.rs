use super::{bottleneck_prefix, channel_trace, nbl_per_block, transition_prefix, NetworkSpec};
use crate::error::{Error, Result};
use crate::nn::{self, BatchNormCache, BatchNormParams, Conv2dCache, DropoutCache, LinearCache};
use crate::nn::{Mode, PoolCache, ReluCache};
use crate::params::{Gradients, LayerParams};
use crate::tensor::{concat_channels, Rng, Scalar, Tensor};

/// BN → ReLU → conv, the repeating unit of bottlenecks and transitions.
#[derive(Debug, Clone)]
struct PreActConv<T: Scalar> {
    bn: BatchNormCache<T>,
    relu: ReluCache,
    conv: Conv2dCache<T>,
}

#[derive(Debug, Clone)]
struct BlockCache<T: Scalar> {
    input_channels: usize,
    /// Each bottleneck's two pre-activation convs.
    bottlenecks: Vec<(PreActConv<T>, PreActConv<T>)>,
}

#[derive(Debug, Clone)]
struct HeadCache<T: Scalar> {
    bn: BatchNormCache<T>,
    relu: ReluCache,
    pool: PoolCache,
    dropout: DropoutCache<T>,
    fc: LinearCache<T>,
}

/// Everything backward needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T: Scalar> {
    mode: Mode,
    stem: Conv2dCache<T>,
    blocks: Vec<BlockCache<T>>,
    transitions: Vec<(PreActConv<T>, PoolCache)>,
    head: HeadCache<T>,
    /// Updated `(prefix, running_mean, running_var)` per batch-norm layer.
    running: Vec<(String, Tensor<T>, Tensor<T>)>,
    channels: Vec<usize>,
}

impl<T: Scalar> ForwardCache<T> {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Channel counts observed at stem, block and transition outputs.
    pub fn observed_channels(&self) -> &[usize] {
        &self.channels
    }

    /// Write the running statistics gathered by a train-mode pass into `params`.
    pub fn apply_running_stats(&self, params: &mut LayerParams<T>) -> Result<()> {
        for (prefix, mean, var) in &self.running {
            *params.get_mut(&format!("{prefix}.running_mean"))? = mean.clone();
            *params.get_mut(&format!("{prefix}.running_var"))? = var.clone();
        }
        Ok(())
    }
}

struct Pass<'a, T: Scalar> {
    spec: &'a NetworkSpec,
    params: &'a LayerParams<T>,
    mode: Mode,
    running: Vec<(String, Tensor<T>, Tensor<T>)>,
}

impl<T: Scalar> Pass<'_, T> {
    fn batchnorm(&mut self, prefix: &str, x: &Tensor<T>) -> Result<(Tensor<T>, BatchNormCache<T>)> {
        let mut bn = BatchNormParams {
            gamma: self.params.get(&format!("{prefix}.gamma"))?.clone(),
            beta: self.params.get(&format!("{prefix}.beta"))?.clone(),
            running_mean: self.params.get(&format!("{prefix}.running_mean"))?.clone(),
            running_var: self.params.get(&format!("{prefix}.running_var"))?.clone(),
            eps: self.spec.bn_eps,
            momentum: self.spec.bn_momentum,
        };
        let out = nn::batchnorm_forward(x, &mut bn, self.mode)?;
        if self.mode == Mode::Train {
            self.running
                .push((prefix.to_string(), bn.running_mean, bn.running_var));
        }
        Ok(out)
    }

    fn preact_conv(
        &mut self,
        bn_prefix: &str,
        conv_prefix: &str,
        x: &Tensor<T>,
        pad: usize,
    ) -> Result<(Tensor<T>, PreActConv<T>)> {
        let (h, bn) = self.batchnorm(bn_prefix, x)?;
        let (h, relu) = nn::relu(&h);
        let weight = self.params.get(&format!("{conv_prefix}.weight"))?;
        let (y, conv) = nn::conv2d_forward(&h, weight, 1, pad)?;
        Ok((y, PreActConv { bn, relu, conv }))
    }
}

/// Raw class scores for `x: [N, C, S, S]`.
///
/// Train mode samples dropout from `rng` and records updated batch-norm
/// running statistics in the returned cache (see
/// [`ForwardCache::apply_running_stats`]); `params` itself is never mutated.
pub fn forward<T: Scalar>(
    spec: &NetworkSpec,
    params: &LayerParams<T>,
    x: &Tensor<T>,
    mode: Mode,
    rng: &mut Rng,
) -> Result<(Tensor<T>, ForwardCache<T>)> {
    let (_, c, h, w) = x.dims4("forward")?;
    if c != spec.input_channels || h != spec.input_size || w != spec.input_size {
        return Err(Error::dim(
            "forward",
            format!(
                "expected input [N, {}, {s}, {s}], got {:?}",
                spec.input_channels,
                x.shape(),
                s = spec.input_size
            ),
        ));
    }
    let nbl = nbl_per_block(spec.depth_n)?;
    let trace = channel_trace(spec)?;
    let mut pass = Pass {
        spec,
        params,
        mode,
        running: Vec::new(),
    };
    let mut channels = Vec::new();

    let (mut h, stem) = nn::conv2d_forward(x, params.get("stem.conv.weight")?, 1, 1)?;
    channels.push(h.shape()[1]);

    let mut blocks = Vec::new();
    let mut transitions = Vec::new();
    for b in 0..trace.blocks.len() {
        let input_channels = h.shape()[1];
        let mut features = vec![h];
        let mut bottlenecks = Vec::with_capacity(nbl);
        for j in 0..nbl {
            let p = bottleneck_prefix(b, j);
            let refs: Vec<&Tensor<T>> = features.iter().collect();
            let inp = concat_channels(&refs)?;
            let (mid, first) =
                pass.preact_conv(&format!("{p}.bn1"), &format!("{p}.conv1"), &inp, 0)?;
            drop(inp);
            let (out, second) =
                pass.preact_conv(&format!("{p}.bn2"), &format!("{p}.conv2"), &mid, 1)?;
            features.push(out);
            bottlenecks.push((first, second));
        }
        let refs: Vec<&Tensor<T>> = features.iter().collect();
        h = concat_channels(&refs)?;
        channels.push(h.shape()[1]);
        blocks.push(BlockCache {
            input_channels,
            bottlenecks,
        });

        if b < trace.transitions.len() {
            let p = transition_prefix(b);
            let (y, unit) = pass.preact_conv(&format!("{p}.bn"), &format!("{p}.conv"), &h, 0)?;
            let (pooled, pool) = nn::avgpool2d(&y)?;
            h = pooled;
            channels.push(h.shape()[1]);
            transitions.push((unit, pool));
        }
    }

    let (y, bn) = pass.batchnorm("head.bn", &h)?;
    let (y, relu) = nn::relu(&y);
    let (y, pool) = nn::global_avgpool(&y)?;
    let (y, dropout) = nn::dropout(&y, spec.dropout_p, mode, rng)?;
    let (logits, fc) = nn::linear(&y, params.get("fc.weight")?, params.get("fc.bias")?)?;

    Ok((
        logits,
        ForwardCache {
            mode,
            stem,
            blocks,
            transitions,
            head: HeadCache {
                bn,
                relu,
                pool,
                dropout,
                fc,
            },
            running: pass.running,
            channels,
        },
    ))
}

fn preact_conv_backward<T: Scalar>(
    unit: &PreActConv<T>,
    bn_prefix: &str,
    conv_prefix: &str,
    grad: &Tensor<T>,
    grads: &mut Gradients<T>,
) -> Result<Tensor<T>> {
    let (g, gw) = nn::conv2d_backward(&unit.conv, grad)?;
    grads.insert(format!("{conv_prefix}.weight"), gw);
    let g = nn::relu_backward(&unit.relu, &g)?;
    let (g, gg, gb) = nn::batchnorm_backward(&unit.bn, &g)?;
    grads.insert(format!("{bn_prefix}.gamma"), gg);
    grads.insert(format!("{bn_prefix}.beta"), gb);
    Ok(g)
}

/// Gradient of `Σ grad_logits ⊙ logits` with respect to every trainable
/// parameter of a train-mode forward pass.
pub fn backward<T: Scalar>(
    spec: &NetworkSpec,
    params: &LayerParams<T>,
    cache: &ForwardCache<T>,
    grad_logits: &Tensor<T>,
) -> Result<Gradients<T>> {
    if cache.mode != Mode::Train {
        return Err(Error::Contract(
            "backward needs the cache of a train-mode forward".into(),
        ));
    }
    let nbl = nbl_per_block(spec.depth_n)?;
    if cache.blocks.len() != spec.num_blocks
        || cache.blocks.iter().any(|b| b.bottlenecks.len() != nbl)
    {
        return Err(Error::Contract(
            "forward cache does not match the spec".into(),
        ));
    }
    let k = spec.growth_k;
    let mut grads = Gradients::new();

    let head = &cache.head;
    let (g, gw, gb) = nn::linear_backward(&head.fc, grad_logits)?;
    grads.insert("fc.weight", gw);
    grads.insert("fc.bias", gb);
    let g = nn::dropout_backward(&head.dropout, &g)?;
    let g = nn::global_avgpool_backward(&head.pool, &g)?;
    let g = nn::relu_backward(&head.relu, &g)?;
    let (mut g, gg, gb) = nn::batchnorm_backward(&head.bn, &g)?;
    grads.insert("head.bn.gamma", gg);
    grads.insert("head.bn.beta", gb);

    for b in (0..cache.blocks.len()).rev() {
        if let Some((unit, pool)) = cache.transitions.get(b) {
            let p = transition_prefix(b);
            let gp = nn::avgpool2d_backward(pool, &g)?;
            g = preact_conv_backward(
                unit,
                &format!("{p}.bn"),
                &format!("{p}.conv"),
                &gp,
                &mut grads,
            )?;
        }

        let block = &cache.blocks[b];
        let c0 = block.input_channels;
        // Gradient for each concatenated part: block input, then every bottleneck output.
        let mut parts = vec![g.slice_channels(0, c0)?];
        for j in 0..nbl {
            parts.push(g.slice_channels(c0 + j * k, k)?);
        }
        for j in (0..nbl).rev() {
            let p = bottleneck_prefix(b, j);
            let (first, second) = &block.bottlenecks[j];
            let gm = preact_conv_backward(
                second,
                &format!("{p}.bn2"),
                &format!("{p}.conv2"),
                &parts[j + 1],
                &mut grads,
            )?;
            let gin = preact_conv_backward(
                first,
                &format!("{p}.bn1"),
                &format!("{p}.conv1"),
                &gm,
                &mut grads,
            )?;
            parts[0].add_assign(&gin.slice_channels(0, c0)?)?;
            for i in 0..j {
                parts[i + 1].add_assign(&gin.slice_channels(c0 + i * k, k)?)?;
            }
        }
        g = parts.swap_remove(0);
    }

    let (_, gw) = nn::conv2d_backward(&cache.stem, &g)?;
    grads.insert("stem.conv.weight", gw);

    for (name, t) in grads.iter() {
        let p = params.get(name)?;
        if p.shape() != t.shape() {
            return Err(Error::Contract(format!(
                "gradient for {name} has shape {:?}, parameter has {:?}",
                t.shape(),
                p.shape()
            )));
        }
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::max_relative_error;
    use crate::model::{build, trainable_names};

    fn tiny() -> NetworkSpec {
        let mut s = NetworkSpec::with_growth(10, 2);
        s.input_size = 8;
        s
    }

    fn random(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
        let len = shape.iter().product();
        Tensor::from_vec(shape, (0..len).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap()
    }

    #[test]
    fn logits_shape() {
        let spec = NetworkSpec::default();
        let params = build::<f32>(&spec, &mut Rng::new(1)).unwrap();
        let x = Tensor::full(&[2, 3, 32, 32], 0.5);
        let (y, cache) = forward(&spec, &params, &x, Mode::Infer, &mut Rng::new(0)).unwrap();
        assert_eq!(y.shape(), &[2, 10]);
        assert_eq!(cache.observed_channels(), &[24, 96, 48, 120, 60, 132]);
    }

    #[test]
    fn wrong_input_shape() {
        let spec = tiny();
        let params = build::<f32>(&spec, &mut Rng::new(1)).unwrap();
        let x = Tensor::zeros(&[1, 3, 16, 16]);
        assert!(matches!(
            forward(&spec, &params, &x, Mode::Infer, &mut Rng::new(0)),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn infer_is_repeatable() {
        let spec = tiny();
        let params = build::<f32>(&spec, &mut Rng::new(3)).unwrap();
        let x = random(&[3, 3, 8, 8], &mut Rng::new(4)).cast();
        let a = forward(&spec, &params, &x, Mode::Infer, &mut Rng::new(1))
            .unwrap()
            .0;
        let b = forward(&spec, &params, &x, Mode::Infer, &mut Rng::new(2))
            .unwrap()
            .0;
        assert_eq!(a, b);
    }

    #[test]
    fn zero_cotangent_and_key_set() {
        let spec = tiny();
        let params = build::<f64>(&spec, &mut Rng::new(3)).unwrap();
        let x = random(&[2, 3, 8, 8], &mut Rng::new(4));
        let (y, cache) = forward(&spec, &params, &x, Mode::Train, &mut Rng::new(1)).unwrap();
        let grads = backward(&spec, &params, &cache, &Tensor::zeros(y.shape())).unwrap();
        let mut keys: Vec<String> = grads.names().map(String::from).collect();
        let mut expect = trainable_names(&spec).unwrap();
        keys.sort();
        expect.sort();
        assert_eq!(keys, expect);
        assert!(grads
            .iter()
            .all(|(_, t)| t.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn infer_cache_rejected_by_backward() {
        let spec = tiny();
        let params = build::<f64>(&spec, &mut Rng::new(3)).unwrap();
        let x = random(&[2, 3, 8, 8], &mut Rng::new(4));
        let (y, cache) = forward(&spec, &params, &x, Mode::Infer, &mut Rng::new(1)).unwrap();
        assert!(matches!(
            backward(&spec, &params, &cache, &y),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn running_stats_applied_only_on_request() {
        let spec = tiny();
        let mut params = build::<f64>(&spec, &mut Rng::new(3)).unwrap();
        let before = params.clone();
        let x = random(&[2, 3, 8, 8], &mut Rng::new(4));
        let (_, cache) = forward(&spec, &params, &x, Mode::Train, &mut Rng::new(1)).unwrap();
        assert_eq!(params, before);
        cache.apply_running_stats(&mut params).unwrap();
        assert_ne!(
            params.get("head.bn.running_mean").unwrap(),
            before.get("head.bn.running_mean").unwrap()
        );
        assert_eq!(
            params.get("fc.weight").unwrap(),
            before.get("fc.weight").unwrap()
        );
    }

    #[test]
    fn end_to_end_gradients_match_finite_differences() {
        let spec = tiny();
        let mut rng = Rng::new(10);
        let mut params = build::<f64>(&spec, &mut rng).unwrap();
        // Spread parameters so ReLUs see both signs.
        for (_, t) in params.iter_mut() {
            for v in t.data_mut() {
                *v += rng.uniform(-0.5, 0.5);
            }
        }
        let x = random(&[2, 3, 8, 8], &mut rng);
        let r = random(&[2, 10], &mut rng);
        let (_, cache) = forward(&spec, &params, &x, Mode::Train, &mut Rng::new(77)).unwrap();
        let grads = backward(&spec, &params, &cache, &r).unwrap();

        let loss = |p: &LayerParams<f64>| {
            let (y, _) = forward(&spec, p, &x, Mode::Train, &mut Rng::new(77)).unwrap();
            y.dot(&r).unwrap()
        };
        let h = 1e-5;
        let mut worst = 0.0f64;
        for name in trainable_names(&spec).unwrap() {
            let analytic = grads.get(&name).unwrap();
            let mut numeric = vec![0.0; analytic.len()];
            for i in 0..analytic.len() {
                let mut p = params.clone();
                p.get_mut(&name).unwrap().data_mut()[i] += h;
                let plus = loss(&p);
                p.get_mut(&name).unwrap().data_mut()[i] -= 2.0 * h;
                let minus = loss(&p);
                numeric[i] = (plus - minus) / (2.0 * h);
            }
            worst = worst.max(max_relative_error(analytic.data(), &numeric, 1e-3));
        }
        assert!(worst < 1e-5, "worst relative error {worst:e}");
    }
}
