#pragma once
// On-disk forms of generated avatars: latent archives, map PNGs, OBJ meshes.
#include <filesystem>

#include "avatar/io.hpp"
#include "avatar/latent_space.hpp"
#include "avatar/model.hpp"

namespace avatar {

io::Archive latent_to_archive(const AvatarLatent& z);
/// Throws io::FormatError on the wrong kind or a length that disagrees with the layout.
AvatarLatent latent_from_archive(const io::Archive& a);

/// Wavefront OBJ with per-vertex UVs; the mesh already uses the OBJ v-up convention.
void write_obj(const std::filesystem::path& path, const Mesh& mesh);

/// diffuse.png, specular.png, normals.png as 16-bit RGB.
void write_maps(const std::filesystem::path& dir, const ReflectanceTriplet& maps);
ReflectanceTriplet read_maps(const std::filesystem::path& dir);

/// latent.avtr, the three maps, mesh.obj, illumination.json and, when a pose
/// is given, render.png.
void write_avatar(const std::filesystem::path& dir, const AvatarModel& m, const AvatarLatent& z,
                  const Pose* pose = nullptr);

}  // namespace avatar
