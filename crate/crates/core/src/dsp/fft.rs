//! Iterative radix-2 FFT on split real/imaginary buffers.

use crate::math;
use crate::Real;

/// Smallest power of two that is >= `n` (and >= 1).
pub fn next_pow2(n: usize) -> usize {
    let mut p = 1;
    while p < n {
        p <<= 1;
    }
    p
}

/// In-place decimation-in-time FFT. `re.len()` must be a power of two and
/// equal to `im.len()`.
pub fn fft_in_place(re: &mut [Real], im: &mut [Real]) {
    let n = re.len();
    debug_assert_eq!(n, im.len());
    debug_assert!(n.is_power_of_two());
    if n <= 1 {
        return;
    }

    // bit-reversal permutation
    let mut j = 0;
    for i in 0..n - 1 {
        if i < j {
            re.swap(i, j);
            im.swap(i, j);
        }
        let mut mask = n >> 1;
        while j & mask != 0 {
            j &= !mask;
            mask >>= 1;
        }
        j |= mask;
    }

    let mut len = 2;
    while len <= n {
        let ang = -2.0 * math::PI / len as Real;
        let (w_re, w_im) = (math::cos(ang), math::sin(ang));
        let half = len / 2;
        let mut start = 0;
        while start < n {
            let (mut cur_re, mut cur_im) = (1.0 as Real, 0.0 as Real);
            for k in 0..half {
                let a = start + k;
                let b = a + half;
                let t_re = re[b] * cur_re - im[b] * cur_im;
                let t_im = re[b] * cur_im + im[b] * cur_re;
                re[b] = re[a] - t_re;
                im[b] = im[a] - t_im;
                re[a] += t_re;
                im[a] += t_im;
                let next_re = cur_re * w_re - cur_im * w_im;
                cur_im = cur_re * w_im + cur_im * w_re;
                cur_re = next_re;
            }
            start += len;
        }
        len <<= 1;
    }
}
