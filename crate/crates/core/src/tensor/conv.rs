use super::{Result, Scalar, TensorError};

/// Output length of one convolution axis, or `None` when the kernel does
/// not fit inside the padded input.
pub fn conv_output_len(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 || kernel == 0 || kernel > input + 2 * pad {
        return None;
    }
    Some((input + 2 * pad - kernel) / stride + 1)
}

/// Resolved geometry of a 3-D convolution over a `[T,H,W,Cin]` input with a
/// `[kT,kH,kW,Cin,Cout]` kernel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub input: [usize; 3],
    pub cin: usize,
    pub kernel: [usize; 3],
    pub cout: usize,
    pub stride: [usize; 3],
    pub pad: [usize; 3],
    pub output: [usize; 3],
}

const AXES: [&str; 3] = ["T", "H", "W"];

impl ConvGeometry {
    pub fn resolve(
        input_shape: &[usize],
        kernel_shape: &[usize],
        stride: [usize; 3],
        pad: [usize; 3],
    ) -> Result<Self> {
        if input_shape.len() != 4 {
            return Err(TensorError::Rank {
                op: "conv3d",
                expected: 4,
                got: input_shape.len(),
            });
        }
        if kernel_shape.len() != 5 {
            return Err(TensorError::Rank {
                op: "conv3d",
                expected: 5,
                got: kernel_shape.len(),
            });
        }
        if kernel_shape[3] != input_shape[3] {
            return Err(TensorError::Dimension {
                op: "conv3d",
                axis: "Cin",
                expected: input_shape[3],
                got: kernel_shape[3],
            });
        }
        let mut output = [0; 3];
        for a in 0..3 {
            if stride[a] == 0 {
                return Err(TensorError::Usage(format!(
                    "conv3d: stride on axis {} must be >= 1",
                    AXES[a]
                )));
            }
            output[a] = conv_output_len(input_shape[a], kernel_shape[a], stride[a], pad[a]).ok_or(
                TensorError::Dimension {
                    op: "conv3d",
                    axis: AXES[a],
                    expected: input_shape[a] + 2 * pad[a],
                    got: kernel_shape[a],
                },
            )?;
        }
        Ok(Self {
            input: [input_shape[0], input_shape[1], input_shape[2]],
            cin: input_shape[3],
            kernel: [kernel_shape[0], kernel_shape[1], kernel_shape[2]],
            cout: kernel_shape[4],
            stride,
            pad,
            output,
        })
    }

    pub fn rows(&self) -> usize {
        self.output.iter().product()
    }

    pub fn patch(&self) -> usize {
        self.kernel.iter().product::<usize>() * self.cin
    }

    pub fn output_shape(&self) -> Vec<usize> {
        vec![self.output[0], self.output[1], self.output[2], self.cout]
    }

    /// Visits every (row, patch-column base, input offset) pair where the
    /// kernel tap lands inside the input. Each visit covers `cin`
    /// contiguous channels.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let [it, ih, iw] = self.input;
        let [kt, kh, kw] = self.kernel;
        let [ot, oh, ow] = self.output;
        let c = self.cin;
        let patch = self.patch();
        let mut row = 0;
        for t in 0..ot {
            for y in 0..oh {
                for x in 0..ow {
                    let base = row * patch;
                    for dt in 0..kt {
                        let st = (t * self.stride[0] + dt) as isize - self.pad[0] as isize;
                        if st < 0 || st >= it as isize {
                            continue;
                        }
                        for dy in 0..kh {
                            let sy = (y * self.stride[1] + dy) as isize - self.pad[1] as isize;
                            if sy < 0 || sy >= ih as isize {
                                continue;
                            }
                            for dx in 0..kw {
                                let sx = (x * self.stride[2] + dx) as isize - self.pad[2] as isize;
                                if sx < 0 || sx >= iw as isize {
                                    continue;
                                }
                                let col = ((dt * kh + dy) * kw + dx) * c;
                                let src = ((st as usize * ih + sy as usize) * iw + sx as usize) * c;
                                f(base + col, src, c);
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    /// Unfolds the input into a `rows × patch` matrix.
    pub fn im2col<T: Scalar>(&self, input: &[T]) -> Vec<T> {
        let mut cols = vec![T::zero(); self.rows() * self.patch()];
        self.for_each_tap(|dst, src, c| {
            cols[dst..dst + c].copy_from_slice(&input[src..src + c]);
        });
        cols
    }

    /// Folds a `rows × patch` matrix back, summing overlapping taps.
    pub fn col2im_add<T: Scalar>(&self, cols: &[T], input_grad: &mut [T]) {
        self.for_each_tap(|dst, src, c| {
            for (g, v) in input_grad[src..src + c].iter_mut().zip(&cols[dst..dst + c]) {
                *g += *v;
            }
        });
    }

    pub fn forward<T: Scalar>(&self, input: &[T], kernel: &[T]) -> Vec<T> {
        let cols = self.im2col(input);
        let (m, k, n) = (self.rows(), self.patch(), self.cout);
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, &cols, (k, 1), kernel, (n, 1), &mut out, false);
        out
    }

    /// Accumulates kernel and (optionally) input gradients for upstream `dy`.
    pub fn backward<T: Scalar>(
        &self,
        input: &[T],
        kernel: &[T],
        dy: &[T],
        kernel_grad: Option<&mut [T]>,
        input_grad: Option<&mut [T]>,
    ) {
        let (m, k, n) = (self.rows(), self.patch(), self.cout);
        if let Some(dk) = kernel_grad {
            let cols = self.im2col(input);
            // dK[k,n] += colsᵀ[k,m] · dy[m,n]
            T::gemm(k, m, n, &cols, (1, k), dy, (n, 1), dk, true);
        }
        if let Some(dx) = input_grad {
            // dcols[m,k] = dy[m,n] · Kᵀ[n,k]
            let mut dcols = vec![T::zero(); m * k];
            T::gemm(m, n, k, dy, (n, 1), kernel, (1, n), &mut dcols, false);
            self.col2im_add(&dcols, dx);
        }
    }
}
