use std::time::Instant;

#[inline]
fn dot4(a: &[f32], b: &[f32]) -> f64 {
    let mut lanes = [0f64; 4];
    for (ca, cb) in a.chunks_exact(4).zip(b.chunks_exact(4)) {
        lanes[0] += ca[0] as f64 * cb[0] as f64;
        lanes[1] += ca[1] as f64 * cb[1] as f64;
        lanes[2] += ca[2] as f64 * cb[2] as f64;
        lanes[3] += ca[3] as f64 * cb[3] as f64;
    }
    (lanes[0] + lanes[1]) + (lanes[2] + lanes[3])
}

#[inline]
fn dot16(a: &[f32], b: &[f32]) -> f64 {
    let mut l = [0f64; 16];
    let ac = a.chunks_exact(16);
    let bc = b.chunks_exact(16);
    let (at, bt) = (ac.remainder(), bc.remainder());
    for (ca, cb) in ac.zip(bc) {
        for i in 0..16 {
            l[i] += ca[i] as f64 * cb[i] as f64;
        }
    }
    for (i, (x, y)) in at.iter().zip(bt).enumerate() {
        l[i] += *x as f64 * *y as f64;
    }
    let mut s = 0.0;
    for i in 0..16 { s += l[i]; }
    s
}

#[inline]
fn cosine_like(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0f64, 0f64, 0f64);
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (*x as f64, *y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    dot / (na * nb).sqrt()
}

fn main() {
    let n = 4096usize;
    let d = 320usize;
    let data: Vec<f32> = (0..n * d).map(|i| ((i * 2654435761) % 1000) as f32 / 1000.0 - 0.5).collect();
    let q: Vec<f32> = data[..d].to_vec();

    // head-split dots (head_dim = 40) like the attention kernel
    for (name, f) in [("dot4", dot4 as fn(&[f32], &[f32]) -> f64), ("dot16", dot16)] {
        let t = Instant::now();
        let mut sink = 0f64;
        for _ in 0..8 {
            for h in 0..8 {
                let lo = h * 40;
                for j in 0..n {
                    sink += f(&q[lo..lo + 40], &data[j * d + lo..j * d + lo + 40]);
                }
            }
        }
        let el = t.elapsed().as_secs_f64();
        println!("{name} head-split 40: {:.2} ns/dot40  ({:.2} GF/s) sink {sink:.1}", el / (8.0 * 8.0 * n as f64) * 1e9, 8.0*8.0*n as f64*80.0/el/1e9);
    }
    // full-row 320 dots (cosine comparison basis)
    for (name, f) in [("dot4", dot4 as fn(&[f32], &[f32]) -> f64), ("dot16", dot16)] {
        let t = Instant::now();
        let mut sink = 0f64;
        for _ in 0..16 {
            for j in 0..n {
                sink += f(&data[..d], &data[j * d..(j + 1) * d]);
            }
        }
        let el = t.elapsed().as_secs_f64();
        println!("{name} full 320: {:.2} ns/dot320 ({:.2} GF/s) sink {sink:.1}", el / (16.0 * n as f64) * 1e9, 16.0*n as f64*640.0/el/1e9);
    }
    {
        let t = Instant::now();
        let mut sink = 0f64;
        for _ in 0..16 {
            for j in 0..n {
                sink += cosine_like(&data[..d], &data[j * d..(j + 1) * d]);
            }
        }
        let el = t.elapsed().as_secs_f64();
        println!("cosine 320: {:.2} ns/pair ({:.2} GF/s eff) sink {sink:.1}", el / (16.0 * n as f64) * 1e9, 16.0*n as f64*1920.0/el/1e9);
    }
}
