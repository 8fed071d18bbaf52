/// Rounds half-up (toward +∞ at exactly .5) to `decimals` places.
///
/// The scaled value is first snapped to 1e-6 so that decimal inputs such as
/// `9.15` (stored as 9.1499999…) round the way they read.
pub fn round_half_up(x: f64, decimals: u32) -> f64 {
    let scale = 10f64.powi(decimals as i32);
    let scaled = ((x * scale) * 1e6).round() / 1e6;
    (scaled + 0.5).floor() / scale
}
