//! Quadrature rules on the reference triangle (barycentric) and on facets.

/// Barycentric point and weight; weights sum to one, so integrals are
/// `area * sum(w * f(x))`.
pub type BaryRule = &'static [([f64; 3], f64)];

const A2: f64 = 2.0 / 3.0;
const B2: f64 = 1.0 / 6.0;

/// Symmetric three-point rule, exact for polynomials of degree 2.
pub const TRIANGLE_DEGREE2: BaryRule = &[
    ([A2, B2, B2], 1.0 / 3.0),
    ([B2, A2, B2], 1.0 / 3.0),
    ([B2, B2, A2], 1.0 / 3.0),
];

const D4_A: f64 = 0.445_948_490_915_964_886;
const D4_WA: f64 = 0.223_381_589_678_011_466;
const D4_B: f64 = 0.091_576_213_509_770_743;
const D4_WB: f64 = 0.109_951_743_655_321_868;

/// Dunavant six-point rule, exact for polynomials of degree 4.
pub const TRIANGLE_DEGREE4: BaryRule = &[
    ([D4_A, D4_A, 1.0 - 2.0 * D4_A], D4_WA),
    ([D4_A, 1.0 - 2.0 * D4_A, D4_A], D4_WA),
    ([1.0 - 2.0 * D4_A, D4_A, D4_A], D4_WA),
    ([D4_B, D4_B, 1.0 - 2.0 * D4_B], D4_WB),
    ([D4_B, 1.0 - 2.0 * D4_B, D4_B], D4_WB),
    ([1.0 - 2.0 * D4_B, D4_B, D4_B], D4_WB),
];

const G2: f64 = 0.288_675_134_594_812_9; // 1 / (2 sqrt 3)

/// Two-point Gauss rule on [0, 1]: `(t, w)` with weights summing to one.
pub const SEGMENT_GAUSS2: [(f64, f64); 2] = [(0.5 - G2, 0.5), (0.5 + G2, 0.5)];

pub fn bary_to_point(vertices: &[[f64; 2]; 3], bary: &[f64; 3]) -> [f64; 2] {
    let mut p = [0.0; 2];
    for (v, &l) in vertices.iter().zip(bary) {
        p[0] += l * v[0];
        p[1] += l * v[1];
    }
    p
}

pub fn integrate_triangle(vertices: &[[f64; 2]; 3], rule: BaryRule, f: impl Fn([f64; 2]) -> f64) -> f64 {
    let [a, b, c] = vertices;
    let area = 0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]));
    area * rule.iter().map(|(bary, w)| w * f(bary_to_point(vertices, bary))).sum::<f64>()
}
