//! Atomic X-ray form factors from a 4-Gaussian analytic parameterization:
//! f(Q) = sum_i a_i exp(-b_i (Q/4pi)^2) + c.

use super::SimError;

/// (symbol, Z, [a1..a4], [b1..b4], c)
type Row = (&'static str, u32, [f64; 4], [f64; 4], f64);

#[rustfmt::skip]
const TABLE: &[Row] = &[
    ("H",  1,  [0.489918, 0.262003, 0.196767, 0.049879], [20.6593, 7.74039, 49.5519, 2.20159], 0.001305),
    ("Li", 3,  [1.12820, 0.750800, 0.617500, 0.465300], [3.95460, 1.05240, 85.3905, 168.261], 0.037700),
    ("Be", 4,  [1.59190, 1.12780, 0.539100, 0.702900], [43.6427, 1.86230, 103.483, 0.542000], 0.038500),
    ("B",  5,  [2.05450, 1.33260, 1.09790, 0.706800], [23.2185, 1.02100, 60.3498, 0.140300], -0.193200),
    ("C",  6,  [2.31000, 1.02000, 1.58860, 0.865000], [20.8439, 10.2075, 0.568700, 51.6512], 0.215600),
    ("N",  7,  [12.2126, 3.13220, 2.01250, 1.16630], [0.005700, 9.89330, 28.9975, 0.582600], -11.5290),
    ("O",  8,  [3.04850, 2.28680, 1.54630, 0.867000], [13.2771, 5.70110, 0.323900, 32.9089], 0.250800),
    ("F",  9,  [3.53920, 2.64120, 1.51700, 1.02430], [10.2825, 4.29440, 0.261500, 26.1476], 0.277600),
    ("Na", 11, [4.76260, 3.17360, 1.26740, 1.11280], [3.28500, 8.84220, 0.313600, 129.424], 0.676000),
    ("Mg", 12, [5.42040, 2.17350, 1.22690, 2.30730], [2.82750, 79.2611, 0.380800, 7.19370], 0.858400),
    ("Al", 13, [6.42020, 1.90020, 1.59360, 1.96460], [3.03870, 0.742600, 31.5472, 85.0886], 1.11510),
    ("Si", 14, [6.29150, 3.03530, 1.98910, 1.54100], [2.43860, 32.3337, 0.678500, 81.6937], 1.14070),
    ("P",  15, [6.43450, 4.17910, 1.78000, 1.49080], [1.90670, 27.1570, 0.526000, 68.1645], 1.11490),
    ("S",  16, [6.90530, 5.20340, 1.43790, 1.58630], [1.46790, 22.2151, 0.253600, 56.1720], 0.866900),
    ("Cl", 17, [11.4604, 7.19640, 6.25560, 1.64550], [0.010400, 1.16620, 18.5194, 47.7784], -9.55740),
    ("K",  19, [8.21860, 7.43980, 1.05190, 0.865900], [12.7949, 0.774800, 213.187, 41.6841], 1.42280),
    ("Ca", 20, [8.62660, 7.38730, 1.58990, 1.02110], [10.4421, 0.659900, 85.7484, 178.437], 1.37510),
    ("Sc", 21, [9.18900, 7.36790, 1.64090, 1.46800], [9.02130, 0.572900, 136.108, 51.3531], 1.33290),
    ("Ti", 22, [9.75950, 7.35580, 1.69910, 1.90210], [7.85080, 0.500000, 35.6338, 116.105], 1.28070),
    ("V",  23, [10.2971, 7.35110, 2.07030, 2.05710], [6.86570, 0.438500, 26.8938, 102.478], 1.21990),
    ("Cr", 24, [10.6406, 7.35370, 3.32400, 1.49220], [6.10380, 0.392000, 20.2626, 98.7399], 1.18320),
    ("Mn", 25, [11.2819, 7.35730, 3.01930, 2.24410], [5.34090, 0.343200, 17.8674, 83.7543], 1.08960),
    ("Fe", 26, [11.7695, 7.35730, 3.52220, 2.30450], [4.76110, 0.307200, 15.3535, 76.8805], 1.03690),
    ("Co", 27, [12.2841, 7.34090, 4.00340, 2.34880], [4.27910, 0.278400, 13.5359, 71.1692], 1.01180),
    ("Ni", 28, [12.8376, 7.29200, 4.44380, 2.38000], [3.87850, 0.256500, 12.1763, 66.3421], 1.03410),
    ("Cu", 29, [13.3380, 7.16760, 5.61580, 1.67350], [3.58280, 0.247000, 11.3966, 64.8126], 1.19100),
    ("Zn", 30, [14.0743, 7.03180, 5.16520, 2.41000], [3.26550, 0.233300, 10.3163, 58.7097], 1.30410),
    ("Ga", 31, [15.2354, 6.70060, 4.35910, 2.96230], [3.06690, 0.241200, 10.7805, 61.4135], 1.71890),
    ("Ge", 32, [16.0816, 6.37470, 3.70680, 3.68300], [2.85090, 0.251600, 11.4468, 54.7625], 2.13130),
    ("As", 33, [16.6723, 6.07010, 3.43130, 4.27790], [2.63450, 0.264700, 12.9479, 47.7972], 2.53100),
    ("Se", 34, [17.0006, 5.81960, 3.97310, 4.35430], [2.40980, 0.272600, 15.2372, 43.8163], 2.84090),
    ("Br", 35, [17.1789, 5.23580, 5.63770, 3.98510], [2.17230, 16.5796, 0.260900, 41.4328], 2.95570),
    ("Rb", 37, [17.1784, 9.64350, 5.13990, 1.52920], [1.78880, 17.3151, 0.274800, 164.934], 3.48730),
    ("Sr", 38, [17.5663, 9.81840, 5.42200, 2.66940], [1.55640, 14.0988, 0.166400, 132.376], 2.50640),
    ("Y",  39, [17.7760, 10.2946, 5.72629, 3.26588], [1.40290, 12.8006, 0.125599, 104.354], 1.91213),
    ("Zr", 40, [17.8765, 10.9480, 5.41732, 3.65721], [1.27618, 11.9160, 0.117622, 87.6627], 2.06929),
    ("Nb", 41, [17.6142, 12.0144, 4.04183, 3.53346], [1.18865, 11.7660, 0.204785, 69.7957], 3.75591),
    ("Mo", 42, [3.70250, 17.2356, 12.8876, 3.74290], [0.277200, 1.09580, 11.0040, 61.6584], 4.38750),
    ("Ag", 47, [19.2808, 16.6885, 4.80450, 1.04630], [0.644600, 7.47260, 24.6605, 99.8156], 5.17900),
    ("Cd", 48, [19.2214, 17.6444, 4.46100, 1.60290], [0.594600, 6.90890, 24.7008, 87.4825], 5.06940),
    ("Sn", 50, [19.1889, 19.1005, 4.45850, 2.46630], [5.83030, 0.503100, 26.8909, 83.9571], 4.78210),
    ("Cs", 55, [20.3892, 19.1062, 10.6620, 1.49530], [3.56900, 0.310700, 24.3879, 213.904], 3.33520),
    ("Ba", 56, [20.3361, 19.2970, 10.8880, 2.69590], [3.21600, 0.275600, 20.2073, 167.202], 2.77310),
    ("W",  74, [29.0818, 15.4300, 14.4327, 5.11982], [1.72029, 9.22590, 0.321703, 57.0560], 9.88750),
    ("Au", 79, [16.8819, 18.5913, 25.5582, 5.86000], [0.461100, 8.62160, 1.48260, 36.3956], 12.0658),
    ("Pb", 82, [31.0617, 13.0637, 18.4420, 5.96960], [0.690200, 2.35760, 8.61800, 47.2579], 13.4118),
];

fn lookup(element: &str) -> Option<&'static Row> {
    TABLE.iter().find(|row| row.0 == element)
}

pub fn is_supported(element: &str) -> bool {
    lookup(element).is_some()
}

/// All supported element symbols, in table order.
pub fn supported_elements() -> impl Iterator<Item = &'static str> {
    TABLE.iter().map(|row| row.0)
}

/// Atomic number of a supported element.
pub fn atomic_number(element: &str) -> Option<u32> {
    lookup(element).map(|row| row.1)
}

/// Form factor at momentum transfer magnitude `q_mag` (A^-1).
pub fn form_factor(element: &str, q_mag: f64) -> Result<f64, SimError> {
    let row = lookup(element).ok_or_else(|| SimError::UnsupportedElement(element.to_string()))?;
    let s = q_mag / (4.0 * std::f64::consts::PI);
    let s2 = s * s;
    let (_, _, a, b, c) = row;
    Ok(a.iter().zip(b).map(|(ai, bi)| ai * (-bi * s2).exp()).sum::<f64>() + c)
}
