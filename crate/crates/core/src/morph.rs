//! Connected components and disk morphology on small label images.

/// A 4-connected run of equal labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Component {
    pub label: u16,
    /// Flattened pixel indices in scan order of discovery.
    pub pixels: Vec<usize>,
}

/// 4-connected components of equal label, in raster order of their first
/// pixel.
pub fn connected_components(labels: &[u16], height: usize, width: usize) -> Vec<Component> {
    let mut seen = vec![false; labels.len()];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..labels.len() {
        if seen[start] {
            continue;
        }
        let label = labels[start];
        let mut pixels = Vec::new();
        seen[start] = true;
        stack.push(start);
        while let Some(p) = stack.pop() {
            pixels.push(p);
            let (y, x) = (p / width, p % width);
            let mut visit = |q: usize| {
                if !seen[q] && labels[q] == label {
                    seen[q] = true;
                    stack.push(q);
                }
            };
            if x > 0 {
                visit(p - 1);
            }
            if x + 1 < width {
                visit(p + 1);
            }
            if y > 0 {
                visit(p - width);
            }
            if y + 1 < height {
                visit(p + width);
            }
        }
        pixels.sort_unstable();
        out.push(Component { label, pixels });
    }
    out
}

fn disk_offsets(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let mut v = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dy * dy + dx * dx <= r * r {
                v.push((dy, dx));
            }
        }
    }
    v
}

/// Pixels within Euclidean distance `radius` of the mask.
pub fn dilate(mask: &[bool], height: usize, width: usize, radius: usize) -> Vec<bool> {
    if radius == 0 {
        return mask.to_vec();
    }
    let offs = disk_offsets(radius);
    let mut out = vec![false; mask.len()];
    for (p, _) in mask.iter().enumerate().filter(|(_, &b)| b) {
        let (y, x) = ((p / width) as isize, (p % width) as isize);
        for &(dy, dx) in &offs {
            let (yy, xx) = (y + dy, x + dx);
            if yy >= 0 && xx >= 0 && (yy as usize) < height && (xx as usize) < width {
                out[yy as usize * width + xx as usize] = true;
            }
        }
    }
    out
}

/// Mask pixels whose whole disk of `radius` lies inside the mask. Pixels
/// off the image edge count as inside, so objects cut by the frame are
/// not eroded from the border.
pub fn erode(mask: &[bool], height: usize, width: usize, radius: usize) -> Vec<bool> {
    if radius == 0 {
        return mask.to_vec();
    }
    let inverse: Vec<bool> = mask.iter().map(|b| !b).collect();
    let grown = dilate(&inverse, height, width, radius);
    mask.iter().zip(grown).map(|(&m, g)| m && !g).collect()
}
