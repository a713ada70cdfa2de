//! Bessel and Hankel functions of integer order for real arguments.
//!
//! `J0`, `J1`, `Y0`, `Y1` use the Cephes rational approximations (absolute
//! error around 1e-15 on [0, 30], Hankel asymptotics beyond 5). Higher orders
//! come from recurrences: upward for `Y_n` and for `J_n` when `n < x`, Miller's
//! normalized backward recurrence for `J_n` otherwise.

use num_complex::Complex64;
use std::f64::consts::{FRAC_PI_4, PI};

const SQRT_FRAC_2_PI: f64 = 0.797_884_560_802_865_4;

#[inline]
fn polevl(x: f64, coef: &[f64]) -> f64 {
    coef.iter().fold(0.0, |acc, &c| acc * x + c)
}

/// Like `polevl` with an implicit leading coefficient of 1.
#[inline]
fn p1evl(x: f64, coef: &[f64]) -> f64 {
    coef.iter().fold(1.0, |acc, &c| acc * x + c)
}

mod c0 {
    pub const DR1: f64 = 5.783_185_962_946_784;
    pub const DR2: f64 = 30.471_262_343_662_087;
    pub const RP: [f64; 4] = [
        -4.794_432_209_782_018e9,
        1.956_174_919_465_565_7e12,
        -2.492_483_443_609_677_2e14,
        9.708_622_510_473_064e15,
    ];
    pub const RQ: [f64; 8] = [
        4.995_631_471_526_51e2,
        1.737_854_016_763_747e5,
        4.844_096_583_399_621e7,
        1.118_555_370_453_568_3e10,
        2.112_775_201_154_892e12,
        3.105_182_298_574_225_6e14,
        3.181_219_559_432_049_6e16,
        1.710_862_940_810_431_5e18,
    ];
    pub const PP: [f64; 7] = [
        7.969_367_292_973_471e-4,
        8.283_523_921_074_408e-2,
        1.239_533_716_464_143,
        5.447_250_030_587_687,
        8.747_165_001_998_17,
        5.303_240_382_353_949,
        1.0,
    ];
    pub const PQ: [f64; 7] = [
        9.244_088_105_588_637e-4,
        8.562_884_743_544_745e-2,
        1.253_527_439_010_589_5,
        5.470_977_403_304_171,
        8.761_908_832_370_695,
        5.306_052_882_353_947,
        1.0,
    ];
    pub const QP: [f64; 8] = [
        -1.136_638_388_984_691_6e-2,
        -1.282_527_186_705_093_1,
        -1.955_395_442_577_359_7e1,
        -9.320_601_521_237_683e1,
        -1.776_811_679_804_880_6e2,
        -1.470_775_051_549_511_8e2,
        -5.141_053_267_665_993e1,
        -6.050_143_506_007_285,
    ];
    pub const QQ: [f64; 7] = [
        6.431_782_561_181_78e1,
        8.564_300_259_769_806e2,
        3.882_401_836_054_016_3e3,
        7.240_467_741_956_525e3,
        5.930_727_011_873_169e3,
        2.062_093_316_603_278_3e3,
        2.420_057_402_402_914e2,
    ];
    pub const YP: [f64; 8] = [
        1.559_243_678_552_357_4e4,
        -1.466_392_959_039_716e7,
        5.435_264_770_518_765e9,
        -9.821_360_657_179_115e11,
        8.759_063_943_953_67e13,
        -3.466_283_033_847_297e15,
        4.427_332_685_725_698_4e16,
        -1.849_508_004_369_866_8e16,
    ];
    pub const YQ: [f64; 7] = [
        1.041_283_536_642_598_4e3,
        6.261_073_301_371_35e5,
        2.689_196_333_938_141_5e8,
        8.640_024_871_039_35e10,
        2.029_796_127_501_055_5e13,
        3.171_577_528_429_750_5e15,
        2.505_962_561_726_530_6e17,
    ];
}

mod c1 {
    pub const Z1: f64 = 1.468_197_064_212_389_3e1;
    pub const Z2: f64 = 4.921_845_632_169_46e1;
    pub const RP: [f64; 4] = [
        -8.999_712_257_055_594e8,
        4.522_282_979_981_940_3e11,
        -7.274_942_452_218_183e13,
        3.682_957_328_638_529e15,
    ];
    pub const RQ: [f64; 8] = [
        6.208_364_781_180_543e2,
        2.569_872_567_577_488_4e5,
        8.351_467_914_319_493e7,
        2.215_115_954_797_925e10,
        4.749_141_220_799_914e12,
        7.843_696_078_762_359e14,
        8.952_223_361_846_274e16,
        5.322_786_203_326_801e18,
    ];
    pub const PP: [f64; 7] = [
        7.621_256_162_081_731e-4,
        7.313_970_569_409_176e-2,
        1.127_196_081_296_849_3,
        5.112_079_511_468_076,
        8.424_045_901_417_724,
        5.214_515_986_823_615,
        1.0,
    ];
    pub const PQ: [f64; 7] = [
        5.713_231_280_725_487e-4,
        6.884_559_087_544_954e-2,
        1.105_142_326_340_617,
        5.073_863_861_286_015,
        8.399_855_543_276_042,
        5.209_828_486_823_619,
        1.0,
    ];
    pub const QP: [f64; 8] = [
        5.108_625_947_501_766e-2,
        4.982_138_729_512_334,
        7.582_382_841_325_453e1,
        3.667_796_093_601_508e2,
        7.108_563_049_989_261e2,
        5.974_896_124_006_136e2,
        2.116_887_571_005_721_3e2,
        2.520_702_058_580_237_2e1,
    ];
    pub const QQ: [f64; 7] = [
        7.423_732_770_356_752e1,
        1.056_448_860_382_628_3e3,
        4.986_410_583_376_536e3,
        9.562_318_924_047_562e3,
        7.997_041_604_473_507e3,
        2.826_192_785_176_390_8e3,
        3.360_936_078_106_983e2,
    ];
    pub const YP: [f64; 6] = [
        1.263_204_747_901_780_4e9,
        -6.473_558_763_791_603e11,
        1.145_095_115_418_237_3e14,
        -8.127_702_555_013_251e15,
        2.024_394_757_135_949e17,
        -7.788_771_962_659_501e17,
    ];
    pub const YQ: [f64; 8] = [
        5.943_015_923_461_282e2,
        2.355_640_929_430_685_6e5,
        7.348_119_444_597_217e7,
        1.876_013_161_087_061_7e10,
        3.882_312_774_962_385_7e12,
        6.205_577_271_469_538e14,
        6.871_410_873_553_005e16,
        3.972_706_081_165_606_4e18,
    ];
}

/// Bessel function of the first kind, order zero.
pub fn j0(x: f64) -> f64 {
    let x = x.abs();
    if x <= 5.0 {
        let z = x * x;
        if x < 1e-5 {
            return 1.0 - z / 4.0;
        }
        let p = (z - c0::DR1) * (z - c0::DR2);
        return p * polevl(z, &c0::RP) / p1evl(z, &c0::RQ);
    }
    let w = 5.0 / x;
    let q = 25.0 / (x * x);
    let p = polevl(q, &c0::PP) / polevl(q, &c0::PQ);
    let q = polevl(q, &c0::QP) / p1evl(q, &c0::QQ);
    let xn = x - FRAC_PI_4;
    (p * xn.cos() - w * q * xn.sin()) * SQRT_FRAC_2_PI / x.sqrt()
}

/// Bessel function of the second kind, order zero. `x` must be positive.
pub fn y0(x: f64) -> f64 {
    if x == 0.0 {
        return f64::NEG_INFINITY;
    } else if x < 0.0 {
        return f64::NAN;
    }
    if x <= 5.0 {
        let z = x * x;
        let w = polevl(z, &c0::YP) / p1evl(z, &c0::YQ);
        return w + 2.0 / PI * x.ln() * j0(x);
    }
    let w = 5.0 / x;
    let z = 25.0 / (x * x);
    let p = polevl(z, &c0::PP) / polevl(z, &c0::PQ);
    let q = polevl(z, &c0::QP) / p1evl(z, &c0::QQ);
    let xn = x - FRAC_PI_4;
    (p * xn.sin() + w * q * xn.cos()) * SQRT_FRAC_2_PI / x.sqrt()
}

/// Bessel function of the first kind, order one.
pub fn j1(x: f64) -> f64 {
    if x < 0.0 {
        return -j1(-x);
    }
    if x <= 5.0 {
        let z = x * x;
        let w = polevl(z, &c1::RP) / p1evl(z, &c1::RQ);
        return w * x * (z - c1::Z1) * (z - c1::Z2);
    }
    let w = 5.0 / x;
    let z = w * w;
    let p = polevl(z, &c1::PP) / polevl(z, &c1::PQ);
    let q = polevl(z, &c1::QP) / p1evl(z, &c1::QQ);
    let xn = x - 0.75 * PI;
    (p * xn.cos() - w * q * xn.sin()) * SQRT_FRAC_2_PI / x.sqrt()
}

/// Bessel function of the second kind, order one. `x` must be positive.
pub fn y1(x: f64) -> f64 {
    if x == 0.0 {
        return f64::NEG_INFINITY;
    } else if x < 0.0 {
        return f64::NAN;
    }
    if x <= 5.0 {
        let z = x * x;
        let w = x * (polevl(z, &c1::YP) / p1evl(z, &c1::YQ));
        return w + 2.0 / PI * (j1(x) * x.ln() - 1.0 / x);
    }
    let w = 5.0 / x;
    let z = w * w;
    let p = polevl(z, &c1::PP) / polevl(z, &c1::PQ);
    let q = polevl(z, &c1::QP) / p1evl(z, &c1::QQ);
    let xn = x - 0.75 * PI;
    (p * xn.sin() + w * q * xn.cos()) * SQRT_FRAC_2_PI / x.sqrt()
}

/// `J_n(x)` for integer `n` and real `x ≥ 0`.
pub fn jn(n: i32, x: f64) -> f64 {
    if n < 0 {
        let v = jn(-n, x);
        return if n % 2 == 0 { v } else { -v };
    }
    match n {
        0 => return j0(x),
        1 => return j1(x),
        _ => {}
    }
    if x == 0.0 {
        return 0.0;
    }
    let n = n as usize;
    if x > n as f64 {
        let (mut jm, mut j) = (j0(x), j1(x));
        for k in 1..n {
            let next = 2.0 * k as f64 / x * j - jm;
            jm = j;
            j = next;
        }
        return j;
    }
    miller_backward(n, x)
}

/// Backward recurrence from a high even start index, normalized with
/// `J_0 + 2 Σ J_{2k} = 1`.
fn miller_backward(n: usize, x: f64) -> f64 {
    const BIG: f64 = 1e250;
    let start = 2 * ((n + 40 + (80.0 * n as f64).sqrt() as usize) / 2);
    let mut jp = 0.0;
    let mut j = 1e-300;
    let mut sum = 0.0;
    let mut result = 0.0;
    for k in (1..=start).rev() {
        let jm = 2.0 * k as f64 / x * j - jp;
        jp = j;
        j = jm;
        if j.abs() > BIG {
            j /= BIG;
            jp /= BIG;
            result /= BIG;
            sum /= BIG;
        }
        // `j` now holds the unnormalized J_{k-1}
        if k - 1 == n {
            result = j;
        }
        if (k - 1) % 2 == 0 && k - 1 > 0 {
            sum += j;
        }
    }
    let norm = 2.0 * sum + j;
    result / norm
}

/// `Y_n(x)` for integer `n` and real `x > 0`.
pub fn yn(n: i32, x: f64) -> f64 {
    if n < 0 {
        let v = yn(-n, x);
        return if n % 2 == 0 { v } else { -v };
    }
    match n {
        0 => return y0(x),
        1 => return y1(x),
        _ => {}
    }
    let (mut ym, mut y) = (y0(x), y1(x));
    for k in 1..n as usize {
        let next = 2.0 * k as f64 / x * y - ym;
        ym = y;
        y = next;
    }
    y
}

/// Hankel function of the second kind `H_n^(2)(x) = J_n(x) - j Y_n(x)`.
pub fn hankel2(n: i32, x: f64) -> Complex64 {
    Complex64::new(jn(n, x), -yn(n, x))
}

/// `d/dx J_n(x) = J_{n-1}(x) - (n/x) J_n(x)`.
pub fn jn_prime(n: i32, x: f64) -> f64 {
    if x == 0.0 {
        return match n {
            1 => 0.5,
            -1 => -0.5,
            _ => 0.0,
        };
    }
    jn(n - 1, x) - n as f64 / x * jn(n, x)
}

/// `d/dx H_n^(2)(x)`.
pub fn hankel2_prime(n: i32, x: f64) -> Complex64 {
    hankel2(n - 1, x) - n as f64 / x * hankel2(n, x)
}
