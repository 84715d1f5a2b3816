use nextstop::synth::{GroundSpec, NoiseSpec, ObjectSpec, Scenario};

/// One car driving at constant velocity for 30 frames, hidden from the
/// prediction in frames 8 to 12.
pub fn occluded_car() -> Scenario {
    Scenario {
        frames: 30,
        seed: 11,
        ego_velocity: [0.4, 0.0, 0.0],
        noise: NoiseSpec::default(),
        ground: GroundSpec::default(),
        objects: vec![ObjectSpec {
            id: 1,
            class: 10,
            birth: 0,
            death: 29,
            position: [6.0, 3.0, -0.95],
            velocity: [1.0, 0.2, 0.0],
            size: [4.0, 1.8, 1.5],
            points: [150, 150],
            occlusions: vec![[8, 12]],
            score: None,
        }],
    }
}

fn object(id: u32, class: u16, position: [f64; 3], velocity: [f64; 3], size: [f64; 3], points: [usize; 2]) -> ObjectSpec {
    ObjectSpec {
        id,
        class,
        birth: 0,
        death: 0,
        position,
        velocity,
        size,
        points,
        occlusions: vec![],
        score: None,
    }
}

/// A car, a person and a cyclist with different lifetimes; the person
/// stays below 50 points per frame until late in the sequence.
pub fn three_objects() -> Scenario {
    let mut car = object(1, 10, [8.0, 0.0, -0.9], [0.8, 0.0, 0.0], [4.0, 1.8, 1.5], [120, 120]);
    car.death = 15;
    let mut person = object(4, 30, [3.0, 5.0, -0.8], [0.1, 0.05, 0.0], [0.6, 0.6, 1.7], [30, 70]);
    person.birth = 2;
    person.death = 15;
    let mut cyclist = object(9, 31, [-6.0, -4.0, -1.0], [0.0, 0.5, 0.0], [1.8, 0.6, 1.7], [80, 80]);
    cyclist.death = 10;
    Scenario {
        frames: 16,
        seed: 5,
        ego_velocity: [0.2, 0.0, 0.0],
        noise: NoiseSpec { score: [0.85, 1.0], ..NoiseSpec::default() },
        ground: GroundSpec::default(),
        objects: vec![car, person, cyclist],
    }
}

/// A pedestrian whose point count grows from 22 to 290.
pub fn growing_person() -> Scenario {
    let mut person = object(3, 30, [4.0, -2.0, -0.8], [0.12, 0.0, 0.0], [0.6, 0.6, 1.7], [22, 290]);
    person.death = 19;
    Scenario {
        frames: 20,
        seed: 17,
        ego_velocity: [0.0; 3],
        noise: NoiseSpec { score: [0.5, 0.9], ..NoiseSpec::default() },
        ground: GroundSpec::default(),
        objects: vec![person],
    }
}

/// Several objects with dropout, jitter and class flips.
pub fn noisy_traffic() -> Scenario {
    let specs = [
        (1, 10, [10.0, 2.0, -0.9], [0.9, 0.0, 0.0]),
        (2, 10, [-5.0, -3.0, -0.9], [1.1, 0.0, 0.0]),
        (3, 18, [20.0, 8.0, -0.5], [-0.6, 0.0, 0.0]),
        (5, 30, [2.0, 6.0, -0.8], [0.0, -0.12, 0.0]),
        (6, 11, [-2.0, 10.0, -1.0], [0.4, -0.3, 0.0]),
    ];
    let objects = specs
        .iter()
        .map(|&(id, class, pos, vel)| {
            let size = match class {
                30 => [0.6, 0.6, 1.7],
                11 => [1.8, 0.6, 1.2],
                18 => [8.0, 2.5, 3.0],
                _ => [4.0, 1.8, 1.5],
            };
            let mut o = object(id, class, pos, vel, size, [90, 130]);
            o.death = 39;
            o
        })
        .collect();
    Scenario {
        frames: 40,
        seed: 23,
        ego_velocity: [0.5, 0.0, 0.0],
        noise: NoiseSpec {
            dropout: 0.1,
            class_flip: 0.05,
            jitter_sigma: 0.05,
            score: [0.6, 1.0],
        },
        ground: GroundSpec { points: 600, ..GroundSpec::default() },
        objects,
    }
}
