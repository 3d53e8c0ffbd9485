use std::path::Path;

use super::{GaussianScene, SceneError};

/// Parse and validate a scene from its JSON text.
pub fn parse_scene(text: &str) -> Result<GaussianScene, SceneError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let mut scene: GaussianScene = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        SceneError::schema(path, e.into_inner().to_string())
    })?;
    scene.validate()?;
    Ok(scene)
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<GaussianScene, SceneError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| SceneError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_scene(&text)
}

pub fn scene_to_json(scene: &GaussianScene) -> String {
    serde_json::to_string_pretty(scene).expect("scene serialization is infallible")
}

pub fn save_scene(scene: &GaussianScene, path: impl AsRef<Path>) -> Result<(), SceneError> {
    let path = path.as_ref();
    std::fs::write(path, scene_to_json(scene)).map_err(|source| SceneError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{Gaussian3D, MotionObject, MotionScript, Trajectory};
    use proptest::prelude::*;

    #[test]
    fn minimal_scene_loads() {
        let text = r#"{"background":[0,0,0],"gaussians":[{"center":[0,0,2],"scale":[0.1,0.1,0.1],"quat":[1,0,0,0],"opacity":1,"color":[1,0,0]}]}"#;
        let scene = parse_scene(text).unwrap();
        assert_eq!(scene.len(), 1);
        assert_eq!(scene.gaussians[0].center, [0.0, 0.0, 2.0]);
        assert_eq!(scene.gaussians[0].color, [1.0, 0.0, 0.0]);
        assert!(scene.motion.is_none());
    }

    #[test]
    fn opacity_violation_reports_field_path() {
        let text = r#"{"background":[0,0,0],"gaussians":[{"center":[0,0,2],"scale":[0.1,0.1,0.1],"quat":[1,0,0,0],"opacity":1.5,"color":[1,0,0]}]}"#;
        let err = parse_scene(text).unwrap_err();
        assert!(
            matches!(&err, SceneError::Schema { path, .. } if path == "gaussians[0].opacity"),
            "{err}"
        );
    }

    #[test]
    fn type_errors_report_field_path() {
        let text = r#"{"gaussians":[{"center":[0,0,2],"scale":[0.1,0.1,0.1],"quat":[1,0,0,0],"opacity":"high","color":[1,0,0]}]}"#;
        let err = parse_scene(text).unwrap_err();
        assert!(err.to_string().contains("gaussians[0].opacity"), "{err}");
    }

    #[test]
    fn missing_file_is_an_io_error() {
        assert!(matches!(
            load_scene("/nonexistent/scene.json"),
            Err(SceneError::Io { .. })
        ));
    }

    fn gaussian() -> impl Strategy<Value = Gaussian3D> {
        (
            prop::array::uniform3(-10.0f64..10.0),
            prop::array::uniform3(1e-3f64..2.0),
            0.0f64..=1.0,
            prop::array::uniform3(0.0f64..=1.0),
        )
            .prop_map(|(center, scale, opacity, color)| Gaussian3D {
                center,
                scale,
                quat: [1.0, 0.0, 0.0, 0.0],
                opacity,
                color,
                velocity: None,
            })
    }

    proptest! {
        #[test]
        fn save_then_load_is_identity(gs in prop::collection::vec(gaussian(), 1..20), vx in -3.0f64..3.0) {
            let mut scene = GaussianScene::new(gs);
            scene.background = [0.25, 0.5, 1.0];
            scene.motion = Some(MotionScript {
                objects: vec![MotionObject { indices: vec![0], trajectory: Trajectory::Linear { velocity: [vx, 0.1, 0.0] } }],
                t_max: 2.0,
            });
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("scene.json");
            save_scene(&scene, &path).unwrap();
            let back = load_scene(&path).unwrap();
            prop_assert_eq!(back, scene);
        }
    }
}
