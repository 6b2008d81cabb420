use crate::kernels::{Graph, Real, Tensor, Var};
use crate::{Error, Result};

/// Standard normal CDF.
pub(crate) fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

impl<T: Real> Graph<T> {
    fn unary<F, D>(&mut self, x: Var, f: F, df: D) -> Var
    where
        F: Fn(T) -> T,
        D: Fn(T, T) -> T + Send + Sync + 'static,
    {
        let out = self.value(x).map(f);
        self.push(
            out,
            &[x],
            Box::new(move |ins, out, g| {
                let data = ins[0]
                    .data()
                    .iter()
                    .zip(out.data())
                    .zip(g.data())
                    .map(|((&x, &y), &g)| g * df(x, y))
                    .collect();
                vec![Some(Tensor::from_parts(g.shape().to_vec(), data))]
            }),
        )
    }

    fn check_same(&self, a: Var, b: Var, op: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(format!(
                "{op}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b, "add")?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(out, &[a, b], Box::new(|_, _, g| vec![Some(g.clone()), Some(g.clone())])))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b, "sub")?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push(out, &[a, b], Box::new(|_, _, g| vec![Some(g.clone()), Some(g.map(|v| -v))])))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b, "mul")?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(
            out,
            &[a, b],
            Box::new(|ins, _, g| {
                vec![Some(g.zip_map(ins[1], |g, y| g * y)), Some(g.zip_map(ins[0], |g, x| g * x))]
            }),
        ))
    }

    /// `x[..., j] + b[j]`.
    pub fn add_bias_last(&mut self, x: Var, b: Var) -> Result<Var> {
        let n = *self.shape(x).last().unwrap_or(&0);
        if self.shape(b) != [n] {
            return Err(Error::shape(format!("bias {:?} for input {:?}", self.shape(b), self.shape(x))));
        }
        let bias = self.value(b).data().to_vec();
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(n) {
            for (v, &bv) in row.iter_mut().zip(&bias) {
                *v += bv;
            }
        }
        Ok(self.push(
            out,
            &[x, b],
            Box::new(move |_, _, g| {
                let mut gb = vec![T::zero(); n];
                for row in g.data().chunks(n) {
                    for (a, &v) in gb.iter_mut().zip(row) {
                        *a += v;
                    }
                }
                vec![Some(g.clone()), Some(Tensor::from_parts(vec![n], gb))]
            }),
        ))
    }

    /// `x[c, ...] + b[c]`.
    pub fn add_bias_channel(&mut self, x: Var, b: Var) -> Result<Var> {
        let c = self.shape(x)[0];
        if self.shape(b) != [c] {
            return Err(Error::shape(format!("bias {:?} for input {:?}", self.shape(b), self.shape(x))));
        }
        let inner = self.value(x).numel() / c.max(1);
        let bias = self.value(b).data().to_vec();
        let mut out = self.value(x).clone();
        for (chunk, &bv) in out.data_mut().chunks_mut(inner).zip(&bias) {
            chunk.iter_mut().for_each(|v| *v += bv);
        }
        Ok(self.push(
            out,
            &[x, b],
            Box::new(move |_, _, g| {
                let gb = g.data().chunks(inner).map(|ch| ch.iter().copied().sum()).collect();
                vec![Some(g.clone()), Some(Tensor::from_parts(vec![c], gb))]
            }),
        ))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let c = T::from_f64(c);
        self.unary(x, move |v| v * c, move |_, _| c)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let c = T::from_f64(c);
        self.unary(x, move |v| v + c, |_, _| T::one())
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(x, |v| -v, |_, _| -T::one())
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, |x, _| x + x)
    }

    /// `|x|` with subgradient 0 at the origin.
    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(
            x,
            |v| v.abs(),
            |x, _| {
                if x > T::zero() {
                    T::one()
                } else if x < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            },
        )
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.exp(), |_, y| y)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.tanh(), |_, y| T::one() - y * y)
    }

    pub fn elu(&mut self, x: Var) -> Var {
        self.unary(
            x,
            |v| if v > T::zero() { v } else { v.exp_m1() },
            |x, y| if x > T::zero() { T::one() } else { y + T::one() },
        )
    }

    /// Exact GELU, `x * Phi(x)`.
    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(
            x,
            |v| {
                let x = v.as_f64();
                T::from_f64(x * normal_cdf(x))
            },
            |v, _| {
                let x = v.as_f64();
                T::from_f64(normal_cdf(x) + x * normal_pdf(x))
            },
        )
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let s = T::from_f64(slope);
        self.unary(
            x,
            move |v| if v > T::zero() { v } else { v * s },
            move |x, _| if x > T::zero() { T::one() } else { s },
        )
    }

    /// `ln(max(x, floor))`; zero gradient where clamped.
    pub fn log_clamp(&mut self, x: Var, floor: f64) -> Var {
        let f = T::from_f64(floor);
        self.unary(
            x,
            move |v| v.max(f).ln(),
            move |x, _| if x > f { T::one() / x } else { T::zero() },
        )
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let shape = self.shape(x).to_vec();
        let total = self.value(x).sum();
        self.push(
            Tensor::scalar(total),
            &[x],
            Box::new(move |_, _, g| vec![Some(Tensor::full(&shape, g.data()[0]))]),
        )
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel().max(1);
        let s = self.sum(x);
        self.scale(s, 1.0 / n as f64)
    }

    /// Identity in value, blocks gradient.
    pub fn detach(&mut self, x: Var) -> Var {
        let v = self.value(x).clone();
        self.constant(v)
    }

    /// Straight-through estimator: the value of `code`, with the gradient
    /// routed unchanged to `input` and none to `code`.
    pub fn straight_through(&mut self, input: Var, code: Var) -> Result<Var> {
        self.check_same(input, code, "straight_through")?;
        let out = self.value(code).clone();
        Ok(self.push(out, &[input, code], Box::new(|_, _, g| vec![Some(g.clone()), None])))
    }
}
